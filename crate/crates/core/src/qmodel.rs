//! Context-conditioned reward regressor for fixture poses.
//!
//! Kernel ridge regression with a Gaussian kernel over the concatenation of
//! the context features (already in `[0, 1]`) and the box-normalized fixture
//! pose. Targets are centered on their mean, so a heavily regularized model
//! falls back to the best constant predictor.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::ActionBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSample {
    pub context: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QModelConfig {
    /// Kernel bandwidth in normalized input units.
    pub bandwidth: f64,
    pub ridge: f64,
}

impl Default for QModelConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.3,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub context_dim: usize,
    pub action_box: ActionBox,
    /// Normalized `context ⊕ action` inputs of the training samples.
    pub kernel_centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub ridge: f64,
    /// Mean training reward, added back to every prediction.
    pub offset: f64,
    pub train_rmse: f64,
}

impl QModel {
    /// A model with explicit centers and weights (no fitting).
    pub fn from_parts(
        context_dim: usize,
        action_box: ActionBox,
        kernel_centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
        bandwidth: f64,
        offset: f64,
    ) -> Result<Self> {
        check_dim(kernel_centers.len(), weights.len())?;
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        for c in &kernel_centers {
            check_dim(context_dim + action_box.dims(), c.len())?;
        }
        Ok(Self {
            context_dim,
            action_box,
            kernel_centers,
            weights,
            bandwidth,
            ridge: 0.0,
            offset,
            train_rmse: f64::NAN,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dims()
    }

    fn input(&self, context: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.context_dim, context.len())?;
        check_dim(self.action_dim(), action.len())?;
        let mut z = context.to_vec();
        z.extend(self.action_box.normalize(action));
        Ok(z)
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        gaussian_kernel(a, b, self.bandwidth)
    }

    pub fn predict(&self, context: &[f64], action: &[f64]) -> Result<f64> {
        let z = self.input(context, action)?;
        Ok(self.predict_normalized(&z))
    }

    fn predict_normalized(&self, z: &[f64]) -> f64 {
        self.offset
            + self
                .kernel_centers
                .iter()
                .zip(&self.weights)
                .map(|(c, w)| w * self.kernel(z, c))
                .sum::<f64>()
    }

    /// Analytic gradient of [`QModel::predict`] with respect to the
    /// (physical, un-normalized) action.
    pub fn action_gradient(&self, context: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let z = self.input(context, action)?;
        let widths = self.action_box.widths();
        let b2 = self.bandwidth * self.bandwidth;
        let mut g = vec![0.0; self.action_dim()];
        for (c, w) in self.kernel_centers.iter().zip(&self.weights) {
            let k = self.kernel(&z, c);
            for (j, gj) in g.iter_mut().enumerate() {
                let zi = self.context_dim + j;
                *gj += -w * k * (z[zi] - c[zi]) / b2 / widths[j];
            }
        }
        Ok(g)
    }

    /// Evaluates the model on an `(x, y)` grid at each orientation slice.
    /// Dimension 2 of the action is the orientation; any further dimensions
    /// are held at the box center.
    pub fn export_qmap(&self, context: &[f64], theta_slices: &[f64], resolution: usize) -> Result<Vec<QMap>> {
        if resolution < 2 {
            return Err(Error::InvalidConfig("q-map resolution must be >= 2".into()));
        }
        if self.action_dim() < 3 {
            return Err(Error::InvalidConfig(format!(
                "q-map needs an (x, y, θ) action, model has {} dimensions",
                self.action_dim()
            )));
        }
        let lo = self.action_box.lower();
        let hi = self.action_box.upper();
        let mut maps = Vec::with_capacity(theta_slices.len());
        for &theta in theta_slices {
            let mut action = self.action_box.center();
            action[2] = theta;
            let mut values = Vec::with_capacity(resolution * resolution);
            for row in 0..resolution {
                action[1] = lo[1] + (hi[1] - lo[1]) * row as f64 / (resolution - 1) as f64;
                for col in 0..resolution {
                    action[0] = lo[0] + (hi[0] - lo[0]) * col as f64 / (resolution - 1) as f64;
                    values.push(self.predict(context, &action)?);
                }
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            maps.push(QMap {
                theta,
                resolution,
                x_range: (lo[0], hi[0]),
                y_range: (lo[1], hi[1]),
                values,
                min,
                max,
            });
        }
        Ok(maps)
    }
}

pub fn gaussian_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

/// Fits the regressor by solving `(K + ridge·I) w = r − mean(r)`.
pub fn fit(samples: &[QSample], action_box: &ActionBox, cfg: QModelConfig) -> Result<QModel> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot fit a q-model on zero samples".into()))?;
    if !(cfg.bandwidth > 0.0) {
        return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {}", cfg.bandwidth)));
    }
    if !(cfg.ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {}", cfg.ridge)));
    }
    let context_dim = first.context.len();
    let mut model = QModel {
        context_dim,
        action_box: action_box.clone(),
        kernel_centers: Vec::with_capacity(samples.len()),
        weights: Vec::new(),
        bandwidth: cfg.bandwidth,
        ridge: cfg.ridge,
        offset: 0.0,
        train_rmse: 0.0,
    };
    let mut rewards = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.reward.is_finite() {
            return Err(Error::NonFiniteReward(s.reward));
        }
        let z = model.input(&s.context, &s.action)?;
        model.kernel_centers.push(z);
        rewards.push(s.reward);
    }
    let n = samples.len();
    let mean = rewards.iter().sum::<f64>() / n as f64;

    let gram = DMatrix::from_fn(n, n, |i, j| model.kernel(&model.kernel_centers[i], &model.kernel_centers[j]));
    let system = &gram + DMatrix::identity(n, n) * cfg.ridge;
    let target = DVector::from_iterator(n, rewards.iter().map(|r| r - mean));
    let chol = system.cholesky().ok_or(Error::SingularSystem { ridge: cfg.ridge })?;
    let w = chol.solve(&target);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { ridge: cfg.ridge });
    }
    model.weights = w.iter().copied().collect();
    model.offset = mean;

    let fitted = &gram * &w;
    let sse: f64 = fitted.iter().zip(&target).map(|(f, t)| (f - t).powi(2)).sum();
    model.train_rmse = (sse / n as f64).sqrt();
    Ok(model)
}

/// Regularized least-squares objective `Σ(Q − r)² + ridge · wᵀKw` of a
/// model on a sample set.
pub fn objective(model: &QModel, samples: &[QSample]) -> Result<f64> {
    let mut sse = 0.0;
    for s in samples {
        sse += (model.predict(&s.context, &s.action)? - s.reward).powi(2);
    }
    let mut penalty = 0.0;
    for (ci, wi) in model.kernel_centers.iter().zip(&model.weights) {
        for (cj, wj) in model.kernel_centers.iter().zip(&model.weights) {
            penalty += wi * wj * model.kernel(ci, cj);
        }
    }
    Ok(sse + model.ridge * penalty)
}

/// One orientation slice of the fitted Q-function, row-major with rows
/// indexed by `y` and columns by `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMap {
    pub theta: f64,
    pub resolution: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl QMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// `(row, col)` of the largest value; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.resolution, best % self.resolution)
    }

    pub fn cell_pose(&self, row: usize, col: usize) -> (f64, f64) {
        let r = (self.resolution - 1) as f64;
        (
            self.x_range.0 + (self.x_range.1 - self.x_range.0) * col as f64 / r,
            self.y_range.0 + (self.y_range.1 - self.y_range.0) * row as f64 / r,
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in 0..self.resolution {
            let line: Vec<String> = (0..self.resolution).map(|c| self.get(row, c).to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// 8-bit gray levels, darker = higher Q.
    pub fn gray_levels(&self) -> Vec<u8> {
        let span = self.max - self.min;
        self.values
            .iter()
            .map(|v| {
                if span > 0.0 {
                    (255.0 * (self.max - v) / span).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }

    /// Binary (P5) PGM.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.resolution, self.resolution)?;
        w.write_all(&self.gray_levels())?;
        Ok(())
    }
}
