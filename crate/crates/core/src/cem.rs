//! Cross-entropy maximization of a black-box score over an action box.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::ActionBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    /// Samples per batch (M).
    pub batch_size: usize,
    /// Elites refit each iteration (N).
    pub elite_count: usize,
    /// Number of sample-and-refit iterations.
    pub iterations: usize,
    /// Defaults to the box center.
    pub init_mean: Option<Vec<f64>>,
    /// Defaults to a quarter of each box side.
    pub init_stddev: Option<Vec<f64>>,
    /// Lower bound on each stddev as a fraction of that box side.
    pub stddev_floor: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            elite_count: 6,
            iterations: 6,
            init_mean: None,
            init_stddev: None,
            stddev_floor: 1e-4,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elite_count < 1 || self.elite_count > self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "cem needs 1 <= elite_count <= batch_size, got {} / {}",
                self.elite_count, self.batch_size
            )));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("cem iterations must be >= 1".into()));
        }
        if !(self.stddev_floor > 0.0) {
            return Err(Error::InvalidConfig("cem stddev_floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemResult {
    pub best: Vec<f64>,
    pub value: f64,
    /// Sampling mean before each iteration, plus the final refit mean.
    pub means: Vec<Vec<f64>>,
    pub evaluations: usize,
}

/// Maximizes `f` over `bx`. Samples are drawn from a diagonal Gaussian and
/// clipped to the box; non-finite scores never become elites. Returns the
/// best point evaluated over the whole run.
pub fn cem_argmax<F, R>(mut f: F, bx: &ActionBox, cfg: &CemConfig, rng: &mut R) -> Result<CemResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let d = bx.dims();
    let widths = bx.widths();
    let mut mean = match &cfg.init_mean {
        Some(m) => {
            check_dim(d, m.len())?;
            bx.clip(m)
        }
        None => bx.center(),
    };
    let mut std = match &cfg.init_stddev {
        Some(s) => {
            check_dim(d, s.len())?;
            s.clone()
        }
        None => widths.iter().map(|w| w / 4.0).collect(),
    };
    let floor: Vec<f64> = widths.iter().map(|w| w * cfg.stddev_floor).collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut means = vec![mean.clone()];
    let mut evaluations = 0;
    let consider = |x: &[f64], score: f64, best: &mut Option<(Vec<f64>, f64)>| {
        if score > best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1) {
            *best = Some((x.to_vec(), score));
        }
    };

    for _ in 0..cfg.iterations {
        let mut batch: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    (mean[i] + std[i] * z).clamp(bx.lower()[i], bx.upper()[i])
                })
                .collect();
            let raw = f(&x);
            evaluations += 1;
            let score = if raw.is_finite() { raw } else { f64::NEG_INFINITY };
            consider(&x, score, &mut best);
            batch.push((x, score));
        }
        if batch.iter().all(|(_, s)| *s == f64::NEG_INFINITY) {
            return Err(Error::AllSamplesNonFinite);
        }
        // stable sort keeps sample-index order among equal scores
        batch.sort_by(|a, b| b.1.total_cmp(&a.1));
        let elites: Vec<&Vec<f64>> = batch
            .iter()
            .take(cfg.elite_count)
            .filter(|(_, s)| s.is_finite())
            .map(|(x, _)| x)
            .collect();
        let k = elites.len() as f64;
        for i in 0..d {
            let m = elites.iter().map(|x| x[i]).sum::<f64>() / k;
            let var = elites.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / k;
            mean[i] = m;
            std[i] = var.sqrt().max(floor[i]);
        }
        means.push(mean.clone());
    }

    let final_score = f(&mean);
    evaluations += 1;
    if final_score.is_finite() {
        consider(&mean, final_score, &mut best);
    }
    let (best, value) = best.ok_or(Error::AllSamplesNonFinite)?;
    Ok(CemResult {
        best,
        value,
        means,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = cem_argmax(|_| 3.25, &ActionBox::unit(2), &CemConfig::default(), &mut rng).unwrap();
        assert_eq!(r.value, 3.25);
    }

    #[test]
    fn finds_quadratic_peak() {
        // Grid oracle at resolution 1e-4 puts the argmax at 0.3.
        let f = |x: &[f64]| -(x[0] - 0.3).powi(2);
        let grid_best = (0..=10_000)
            .map(|i| i as f64 * 1e-4)
            .max_by(|a, b| f(&[*a]).total_cmp(&f(&[*b])))
            .unwrap();
        assert!((grid_best - 0.3).abs() < 1e-9);

        let cfg = CemConfig {
            batch_size: 64,
            elite_count: 8,
            iterations: 6,
            ..CemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = cem_argmax(f, &ActionBox::unit(1), &cfg, &mut rng).unwrap();
        assert!((r.best[0] - grid_best).abs() < 0.01, "{:?}", r.best);
    }

    #[test]
    fn default_iterations() {
        assert_eq!(CemConfig::default().iterations, 6);
    }

    #[test]
    fn elitism_and_box_respect() {
        let bx = ActionBox::new(vec![-1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let mut seen = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = cem_argmax(
            |x| {
                let v = (3.0 * x[0]).sin() + x[1];
                seen.push((x.to_vec(), v));
                v
            },
            &bx,
            &CemConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(seen.iter().all(|(x, _)| bx.contains(x)));
        assert!(bx.contains(&r.best));
        let first_batch_max = seen[..64].iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        assert!(r.value >= first_batch_max);
        assert!(seen.iter().all(|(_, v)| r.value >= *v));
        assert_eq!(r.evaluations, seen.len());
    }

    #[test]
    fn non_finite_scores_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = cem_argmax(
            |x| if x[0] > 0.5 { f64::NAN } else { x[0] },
            &ActionBox::unit(1),
            &CemConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(r.best[0] <= 0.5 && r.value.is_finite());
        let err = cem_argmax(|_| f64::NAN, &ActionBox::unit(1), &CemConfig::default(), &mut rng);
        assert!(matches!(err, Err(Error::AllSamplesNonFinite)));
    }

    #[test]
    fn invalid_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CemConfig {
            elite_count: 100,
            ..CemConfig::default()
        };
        assert!(cem_argmax(|_| 0.0, &ActionBox::unit(1), &cfg, &mut rng).is_err());
    }

    #[test]
    fn mean_approaches_bowl_optimum() {
        // random anisotropic bowls over a 3-D box, the fixture pose dimension
        let mut monotone = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let opt: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let wts: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            let f = |x: &[f64]| -(0..3).map(|i| wts[i] * (x[i] - opt[i]).powi(2)).sum::<f64>();
            let r = cem_argmax(f, &ActionBox::unit(3), &CemConfig::default(), &mut rng).unwrap();
            let dist: Vec<f64> = r
                .means
                .iter()
                .map(|m| (0..3).map(|i| (m[i] - opt[i]).powi(2)).sum::<f64>().sqrt())
                .collect();
            if dist.windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
        assert!(monotone >= 90, "{monotone} of 100 runs monotone");
    }
}
