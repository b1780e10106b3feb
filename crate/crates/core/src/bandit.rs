//! Smoothed zooming over a continuous action box.
//!
//! The action space is covered by balls centered on a mesh of spacing `h`.
//! Each round the ball with the largest `mean + 2·radius` is selected and
//! the action is drawn uniformly from that ball clipped to the box, which
//! smooths over discontinuities in the reward. Radii follow
//! `sqrt(2 ln T / (n + 1))`, so balls shrink as they collect samples; any
//! part of the box they stop covering gets a fresh ball.
//!
//! Radius bookkeeping per ball and round:
//!
//! * `n'` counts history samples within the previous radius `r`,
//! * `r' = f(n')` defines the confidence ball used for `n` and the mean,
//! * `r = f(n)` is the radius used for the next selection score, the next
//!   sampling region and the coverage test.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{ActionBox, Metric, MetricKind};

/// Attempts at rejection sampling inside an L2 ball before falling back to
/// the ball center.
const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringBall {
    /// Insertion order; dense and unique.
    pub id: usize,
    pub center: Vec<f64>,
    /// Samples inside the current confidence ball.
    pub n: usize,
    pub mean_reward: f64,
    /// `sqrt(2 ln T / (n + 1))`.
    pub radius: f64,
    /// Radius of the confidence ball that `n` and `mean_reward` were counted in.
    pub confidence_radius: f64,
    /// Number of history samples that existed when the ball was activated.
    pub born_round: usize,
}

impl CoveringBall {
    pub fn score(&self) -> f64 {
        self.mean_reward + 2.0 * self.radius
    }
}

/// One bandit decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ball_id: usize,
    pub action: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditRound {
    pub round: usize,
    pub ball_id: usize,
    pub action: Vec<f64>,
    pub reward: f64,
    pub score: f64,
}

/// Per-round audit trail of a bandit run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BanditHistory {
    pub rounds: Vec<BanditRound>,
}

impl BanditHistory {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// CSV with columns `round, ball_id, a0..a{d-1}, reward, score`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dims = self.rounds.first().map_or(0, |r| r.action.len());
        write!(w, "round,ball_id")?;
        for i in 0..dims {
            write!(w, ",a{i}")?;
        }
        writeln!(w, ",reward,score")?;
        for r in &self.rounds {
            write!(w, "{},{}", r.round, r.ball_id)?;
            for a in &r.action {
                write!(w, ",{a}")?;
            }
            writeln!(w, ",{},{}", r.reward, r.score)?;
        }
        Ok(())
    }
}

/// Points `lower + k·step·scale` for `k = 0..=ceil(side/step)` per dimension,
/// with the last point clamped to `upper`, enumerated in raster order (last
/// dimension fastest).
pub fn ceil_mesh(bx: &ActionBox, metric: &Metric, step: f64) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..bx.dims())
        .map(|i| {
            let lo = bx.lower()[i];
            let hi = bx.upper()[i];
            let s = metric.scale[i];
            let side = (hi - lo) / s;
            let count = ((side / step) - 1e-9).ceil().max(0.0) as usize;
            let mut axis: Vec<f64> = (0..=count)
                .map(|k| (lo + k as f64 * step * s).min(hi))
                .collect();
            axis.dedup();
            axis
        })
        .collect();

    let mut points = vec![Vec::with_capacity(bx.dims())];
    for axis in &axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Adaptive covering of the action box plus the full sample history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomingState {
    action_box: ActionBox,
    metric: Metric,
    h: f64,
    horizon: usize,
    balls: Vec<CoveringBall>,
    /// Row-major, `dims` values per round.
    history_actions: Vec<f64>,
    history_rewards: Vec<f64>,
    test_grid: Vec<Vec<f64>>,
}

impl ZoomingState {
    /// Activates one ball per mesh point with spacing `h` (in metric units).
    pub fn new(action_box: ActionBox, h: f64, horizon: usize, metric: Metric) -> Result<Self> {
        check_dim(action_box.dims(), metric.dims())?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidConfig(format!("initial spacing h must be > 0, got {h}")));
        }
        if horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        let min_side = (0..action_box.dims())
            .map(|i| (action_box.upper()[i] - action_box.lower()[i]) / metric.scale[i])
            .fold(f64::INFINITY, f64::min);
        if h > min_side {
            return Err(Error::InvalidConfig(format!(
                "initial spacing h = {h} exceeds the smallest box side {min_side}"
            )));
        }

        let test_grid = ceil_mesh(&action_box, &metric, h / 2.0);
        let mut state = Self {
            action_box,
            metric,
            h,
            horizon,
            balls: Vec::new(),
            history_actions: Vec::new(),
            history_rewards: Vec::new(),
            test_grid,
        };
        for center in ceil_mesh(&state.action_box, &state.metric, h) {
            state.push_fresh_ball(center);
        }
        Ok(state)
    }

    /// Box-normalized scaled-L∞ metric, the default.
    pub fn with_default_metric(action_box: ActionBox, h: f64, horizon: usize) -> Result<Self> {
        let metric = Metric::for_box(MetricKind::ScaledLinf, &action_box);
        Self::new(action_box, h, horizon, metric)
    }

    pub fn action_box(&self) -> &ActionBox {
        &self.action_box
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Current round, equal to the number of observed samples.
    pub fn t(&self) -> usize {
        self.history_rewards.len()
    }

    pub fn balls(&self) -> &[CoveringBall] {
        &self.balls
    }

    pub fn history(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.history_actions
            .chunks_exact(self.action_box.dims())
            .zip(self.history_rewards.iter().copied())
    }

    pub fn test_grid(&self) -> &[Vec<f64>] {
        &self.test_grid
    }

    /// `sqrt(2 ln T / (n + 1))`.
    pub fn radius_for(&self, n: usize) -> f64 {
        (2.0 * (self.horizon as f64).ln() / (n as f64 + 1.0)).sqrt()
    }

    fn push_fresh_ball(&mut self, center: Vec<f64>) {
        let r = self.radius_for(0);
        self.balls.push(CoveringBall {
            id: self.balls.len(),
            center,
            n: 0,
            mean_reward: 0.0,
            radius: r,
            confidence_radius: r,
            born_round: self.t(),
        });
    }

    /// UCB selection; ties go to the lowest id.
    pub fn select_ball(&self) -> &CoveringBall {
        let mut best = &self.balls[0];
        let mut best_score = best.score();
        for b in &self.balls[1..] {
            let s = b.score();
            if s > best_score {
                best = b;
                best_score = s;
            }
        }
        best
    }

    /// Picks the ball and draws the action uniformly from ball ∩ box.
    pub fn select_arm<R: Rng + ?Sized>(&self, rng: &mut R) -> Selection {
        let ball = self.select_ball();
        Selection {
            ball_id: ball.id,
            action: self.sample_in_ball(&ball.center, ball.radius, rng),
            score: ball.score(),
        }
    }

    /// Uniform sample from `{y in box : D(center, y) <= r}`.
    pub fn sample_in_ball<R: Rng + ?Sized>(&self, center: &[f64], r: f64, rng: &mut R) -> Vec<f64> {
        let lo: Vec<f64> = (0..center.len())
            .map(|i| (center[i] - r * self.metric.scale[i]).max(self.action_box.lower()[i]))
            .collect();
        let hi: Vec<f64> = (0..center.len())
            .map(|i| (center[i] + r * self.metric.scale[i]).min(self.action_box.upper()[i]))
            .collect();
        let draw = |rng: &mut R| -> Vec<f64> {
            lo.iter()
                .zip(&hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect()
        };
        match self.metric.kind {
            MetricKind::ScaledLinf => draw(rng),
            MetricKind::ScaledL2 => {
                for _ in 0..MAX_REJECTION_ATTEMPTS {
                    let y = draw(rng);
                    if self.metric.distance_unchecked(center, &y) <= r {
                        return y;
                    }
                }
                center.to_vec()
            }
        }
    }

    /// Sample count and reward sum within `r`, from precomputed distances.
    fn count_within(&self, dist: &[f64], r: f64) -> (usize, f64) {
        let mut n = 0;
        let mut sum = 0.0;
        for (d, reward) in dist.iter().zip(&self.history_rewards) {
            if *d <= r {
                n += 1;
                sum += reward;
            }
        }
        (n, sum)
    }

    /// Records `(action, reward)` and refreshes every ball by direct recount,
    /// then activates balls for any uncovered test-grid point.
    pub fn update(&mut self, action: &[f64], reward: f64) -> Result<()> {
        check_dim(self.action_box.dims(), action.len())?;
        if !reward.is_finite() {
            return Err(Error::NonFiniteReward(reward));
        }
        if !self.action_box.contains(action) {
            return Err(Error::OutsideBox(action.to_vec()));
        }
        self.history_actions.extend_from_slice(action);
        self.history_rewards.push(reward);

        let d = self.action_box.dims();
        let mut dist = Vec::with_capacity(self.history_rewards.len());
        for idx in 0..self.balls.len() {
            let center = &self.balls[idx].center;
            dist.clear();
            dist.extend(
                self.history_actions
                    .chunks_exact(d)
                    .map(|a| self.metric.distance_unchecked(center, a)),
            );
            let (n_prime, _) = self.count_within(&dist, self.balls[idx].radius);
            let r_prime = self.radius_for(n_prime);
            let (n, sum) = self.count_within(&dist, r_prime);
            let r = self.radius_for(n);
            let ball = &mut self.balls[idx];
            ball.confidence_radius = r_prime;
            ball.n = n;
            ball.radius = r;
            ball.mean_reward = if n > 0 { sum / n as f64 } else { 0.0 };
        }
        self.activate_uncovered();
        Ok(())
    }

    pub fn is_covered(&self, p: &[f64]) -> bool {
        self.balls
            .iter()
            .any(|b| self.metric.distance_unchecked(&b.center, p) <= b.radius)
    }

    /// Raster scan of the `h/2` test grid; every uncovered point becomes the
    /// center of a fresh ball. Returns the number of balls activated.
    pub fn activate_uncovered(&mut self) -> usize {
        let mut activated = 0;
        for gi in 0..self.test_grid.len() {
            if !self.is_covered(&self.test_grid[gi]) {
                let center = self.test_grid[gi].clone();
                self.push_fresh_ball(center);
                activated += 1;
            }
        }
        activated
    }

    /// Runs `rounds` select → observe → update cycles.
    pub fn run<R, F>(&mut self, mut reward_fn: F, rounds: usize, rng: &mut R) -> Result<BanditHistory>
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> f64,
    {
        if rounds > self.horizon.saturating_sub(self.t()) {
            return Err(Error::InvalidConfig(format!(
                "{rounds} rounds requested but only {} remain before the horizon {}",
                self.horizon.saturating_sub(self.t()),
                self.horizon
            )));
        }
        let mut history = BanditHistory::default();
        for _ in 0..rounds {
            let sel = self.select_arm(rng);
            let reward = reward_fn(&sel.action);
            self.update(&sel.action, reward)?;
            history.rounds.push(BanditRound {
                round: self.t(),
                ball_id: sel.ball_id,
                action: sel.action,
                reward,
                score: sel.score,
            });
        }
        Ok(history)
    }

    /// Test hook: overwrite ball radii (used to construct shrunken states).
    #[doc(hidden)]
    pub fn set_radius(&mut self, id: usize, r: f64) {
        self.balls[id].radius = r;
    }
}

/// Free function form of [`ZoomingState::new`].
pub fn init_state(action_box: ActionBox, h: f64, horizon: usize, metric: Metric) -> Result<ZoomingState> {
    ZoomingState::new(action_box, h, horizon, metric)
}

/// Uniform-random sampling over the box.
#[derive(Debug, Clone)]
pub struct UniformBaseline {
    pub action_box: ActionBox,
}

impl UniformBaseline {
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.action_box.sample_uniform(rng)
    }
}

/// Classic UCB1 over the fixed initial mesh, no zooming.
#[derive(Debug, Clone)]
pub struct GridUcb1 {
    arms: Vec<Vec<f64>>,
    counts: Vec<usize>,
    sums: Vec<f64>,
    t: usize,
}

impl GridUcb1 {
    pub fn new(arms: Vec<Vec<f64>>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::InvalidConfig("grid UCB1 needs at least one arm".into()));
        }
        let k = arms.len();
        Ok(Self {
            arms,
            counts: vec![0; k],
            sums: vec![0.0; k],
            t: 0,
        })
    }

    /// Arms on the same mesh the zooming algorithm starts from.
    pub fn on_mesh(action_box: &ActionBox, metric: &Metric, h: f64) -> Result<Self> {
        Self::new(ceil_mesh(action_box, metric, h))
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Plays every arm once, then maximizes `mean + sqrt(2 ln t / n)`.
    pub fn select(&self) -> (usize, Vec<f64>, f64) {
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return (i, self.arms[i].clone(), f64::INFINITY);
        }
        let ln_t = (self.t as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..self.arms.len() {
            let n = self.counts[i] as f64;
            let s = self.sums[i] / n + (2.0 * ln_t / n).sqrt();
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        (best, self.arms[best].clone(), best_score)
    }

    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::NonFiniteReward(reward));
        }
        self.counts[arm] += 1;
        self.sums[arm] += reward;
        self.t += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Uniform,
    GridUcb1,
}

/// Either comparison baseline behind one interface.
#[derive(Debug, Clone)]
pub enum Baseline {
    Uniform(UniformBaseline),
    GridUcb1(GridUcb1),
}

impl Baseline {
    pub fn new(kind: BaselineKind, action_box: &ActionBox, metric: &Metric, h: f64) -> Result<Self> {
        Ok(match kind {
            BaselineKind::Uniform => Baseline::Uniform(UniformBaseline {
                action_box: action_box.clone(),
            }),
            BaselineKind::GridUcb1 => Baseline::GridUcb1(GridUcb1::on_mesh(action_box, metric, h)?),
        })
    }

    /// Returns `(arm index, action)`; the uniform baseline reports arm 0.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        match self {
            Baseline::Uniform(u) => (0, u.select(rng)),
            Baseline::GridUcb1(g) => {
                let (i, a, _) = g.select();
                (i, a)
            }
        }
    }

    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        match self {
            Baseline::Uniform(_) => {
                if reward.is_finite() {
                    Ok(())
                } else {
                    Err(Error::NonFiniteReward(reward))
                }
            }
            Baseline::GridUcb1(g) => g.update(arm, reward),
        }
    }

    pub fn run<R, F>(&mut self, mut reward_fn: F, rounds: usize, rng: &mut R) -> Result<BanditHistory>
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> f64,
    {
        let mut history = BanditHistory::default();
        for round in 1..=rounds {
            let (arm, action) = self.select(rng);
            let reward = reward_fn(&action);
            self.update(arm, reward)?;
            history.rounds.push(BanditRound {
                round,
                ball_id: arm,
                action,
                reward,
                score: f64::NAN,
            });
        }
        Ok(history)
    }
}

/// Synthetic reward functions over a box, for benchmarking the bandits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Landscape {
    /// 1 inside the sub-box `[lower, upper]`, 0 elsewhere.
    Step { lower: Vec<f64>, upper: Vec<f64> },
    /// `exp(-|x - center|^2 / (2 width^2))`.
    Bump { center: Vec<f64>, width: f64 },
}

impl Landscape {
    /// The 1-D step of width 0.1 centered in `[0, 1]`.
    pub fn unit_step() -> Self {
        Landscape::Step {
            lower: vec![0.45],
            upper: vec![0.55],
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Landscape::Step { lower, .. } => lower.len(),
            Landscape::Bump { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Landscape::Step { lower, upper } => {
                check_dim(lower.len(), upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::InvalidConfig("step landscape needs lower <= upper".into()));
                }
            }
            Landscape::Bump { width, .. } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidConfig(format!("bump width must be > 0, got {width}")));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Landscape::Step { lower, upper } => {
                let inside = x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| l <= v && v <= u);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Landscape::Bump { center, width } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                (-d2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Largest value over any box that contains the step or bump center.
    pub fn max_value(&self) -> f64 {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_1d(h: f64, horizon: usize) -> ZoomingState {
        ZoomingState::with_default_metric(ActionBox::unit(1), h, horizon).unwrap()
    }

    #[test]
    fn initial_mesh_1d() {
        let s = unit_1d(0.5, 100);
        let centers: Vec<f64> = s.balls().iter().map(|b| b.center[0]).collect();
        assert_eq!(centers, vec![0.0, 0.5, 1.0]);
        for b in s.balls() {
            assert_eq!(b.mean_reward, 0.0);
            assert_eq!(b.n, 0);
        }
    }

    #[test]
    fn initial_mesh_includes_upper_corner() {
        let s = unit_1d(0.3, 10);
        let centers: Vec<f64> = s.balls().iter().map(|b| b.center[0]).collect();
        assert_eq!(centers.len(), 5);
        assert_eq!(*centers.last().unwrap(), 1.0);
        let s = ZoomingState::with_default_metric(ActionBox::unit(2), 0.5, 10).unwrap();
        assert_eq!(s.balls().len(), 9);
        assert!(s.test_grid().iter().all(|p| s.is_covered(p)));
    }

    #[test]
    fn initial_radius() {
        let s = unit_1d(0.5, 100);
        // sqrt(2 ln 100) = 3.034854258770293
        assert!((s.balls()[0].radius - 3.034_854_258_770_293).abs() < 1e-12);
    }

    #[test]
    fn init_rejects_bad_parameters() {
        assert!(ZoomingState::with_default_metric(ActionBox::unit(1), 1.5, 10).is_err());
        assert!(ZoomingState::with_default_metric(ActionBox::unit(1), 0.0, 10).is_err());
        assert!(ZoomingState::with_default_metric(ActionBox::unit(1), 0.5, 0).is_err());
    }

    #[test]
    fn single_ball_is_selected() {
        let s = ZoomingState::with_default_metric(ActionBox::unit(1), 1.0, 10).unwrap();
        // mesh {0, 1}; shrink to one ball by checking argmax with equal scores
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.select_arm(&mut rng).ball_id, 0);
    }

    #[test]
    fn selection_uses_mean_plus_two_radii() {
        let mut s = unit_1d(1.0, 10);
        s.balls[0].mean_reward = 1.0;
        s.balls[0].radius = 0.5;
        s.balls[1].mean_reward = 0.5;
        s.balls[1].radius = 1.0;
        assert_eq!(s.select_ball().id, 1);
        assert_eq!(s.select_ball().score(), 2.5);
    }

    #[test]
    fn ball_sampling_is_uniform() {
        let mut s = unit_1d(0.5, 10);
        s.balls[1].radius = 0.2; // center 0.5 → [0.3, 0.7]
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut xs: Vec<f64> = (0..10_000)
            .map(|_| s.sample_in_ball(&[0.5], 0.2, &mut rng)[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = (x - 0.3) / 0.4;
                (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
        assert!(xs[0] >= 0.3 && xs[xs.len() - 1] <= 0.7);
    }

    #[test]
    fn sampling_clips_to_box_and_l2_rejects() {
        let b = ActionBox::unit(2);
        let m = Metric::for_box(MetricKind::ScaledL2, &b);
        let s = ZoomingState::new(b, 0.5, 10, m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let y = s.sample_in_ball(&[0.0, 0.0], 0.3, &mut rng);
            assert!(s.action_box().contains(&y));
            assert!(s.metric().distance(&[0.0, 0.0], &y).unwrap() <= 0.3);
        }
    }

    #[test]
    fn first_update_sets_single_sample_mean() {
        let mut s = unit_1d(0.5, 100);
        s.update(&[0.4], 0.7).unwrap();
        for b in s.balls() {
            // every initial ball is huge, so it contains the action
            assert_eq!(b.n, 1);
            assert_eq!(b.mean_reward, 0.7);
        }
    }

    #[test]
    fn radius_after_k_samples_in_one_ball() {
        let mut s = unit_1d(0.5, 1000);
        for _ in 0..5 {
            s.update(&[0.5], 1.0).unwrap();
        }
        let expected = (2.0 * 1000f64.ln() / 6.0).sqrt();
        assert!((s.balls()[1].radius - expected).abs() < 1e-12);
    }

    #[test]
    fn update_rejects_bad_input() {
        let mut s = unit_1d(0.5, 100);
        assert!(matches!(s.update(&[0.5], f64::NAN), Err(Error::NonFiniteReward(_))));
        assert!(matches!(s.update(&[1.5], 0.0), Err(Error::OutsideBox(_))));
        assert!(s.update(&[0.5, 0.5], 0.0).is_err());
        assert_eq!(s.t(), 0);
    }

    #[test]
    fn activation_noop_when_covered() {
        let mut s = unit_1d(0.5, 100);
        let before = s.clone();
        assert_eq!(s.activate_uncovered(), 0);
        assert_eq!(s, before);
    }

    #[test]
    fn activation_after_shrinking() {
        let mut s = unit_1d(0.5, 100);
        for id in 0..s.balls().len() {
            s.set_radius(id, 0.01);
        }
        // only the left corner stays relevant
        for b in s.balls.iter_mut() {
            b.center = vec![0.0];
        }
        let added = s.activate_uncovered();
        assert!(added >= 1);
        assert!(s.test_grid().iter().all(|p| s.is_covered(p)));
        let fresh = s.balls().last().unwrap();
        assert_eq!(fresh.radius, s.radius_for(0));
        assert_eq!(fresh.id, s.balls().len() - 1);
    }

    #[test]
    fn zero_rounds_changes_nothing() {
        let mut s = unit_1d(0.5, 100);
        let before = s.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = s.run(|_| 1.0, 0, &mut rng).unwrap();
        assert!(h.is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn constant_reward_gives_unit_means() {
        let mut s = unit_1d(0.25, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        s.run(|_| 1.0, 300, &mut rng).unwrap();
        for b in s.balls().iter().filter(|b| b.n > 0) {
            assert_eq!(b.mean_reward, 1.0);
        }
    }

    #[test]
    fn run_respects_horizon() {
        let mut s = unit_1d(0.5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.run(|_| 0.0, 6, &mut rng).is_err());
        s.run(|_| 0.0, 5, &mut rng).unwrap();
        assert_eq!(s.t(), 5);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let run = || {
            let mut s = ZoomingState::with_default_metric(ActionBox::unit(2), 0.25, 400).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            s.run(|a| (a[0] - 0.3).abs() + a[1], 400, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn history_csv_layout() {
        let mut s = ZoomingState::with_default_metric(ActionBox::unit(2), 0.5, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = s.run(|_| 0.5, 3, &mut rng).unwrap();
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "round,ball_id,a0,a1,reward,score");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn uniform_baseline_mean() {
        let u = UniformBaseline {
            action_box: ActionBox::unit(1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = (0..100_000).map(|_| u.select(&mut rng)[0]).sum::<f64>() / 100_000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn grid_ucb1_single_arm() {
        let mut g = GridUcb1::new(vec![vec![0.3]]).unwrap();
        for _ in 0..50 {
            let (i, a, _) = g.select();
            assert_eq!(i, 0);
            assert_eq!(a, vec![0.3]);
            g.update(i, 0.2).unwrap();
        }
    }

    #[test]
    fn grid_ucb1_prefers_better_bernoulli_arm() {
        let mut wins = 0;
        for seed in 0..20 {
            let b = ActionBox::unit(1);
            let m = Metric::for_box(MetricKind::ScaledLinf, &b);
            let mut g = GridUcb1::on_mesh(&b, &m, 1.0).unwrap();
            assert_eq!(g.arms().len(), 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut good = 0;
            for t in 1..=1000 {
                let (i, _, _) = g.select();
                let p = if i == 1 { 0.9 } else { 0.1 };
                let r = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                g.update(i, r).unwrap();
                if t >= 500 && i == 1 {
                    good += 1;
                }
            }
            if good as f64 / 501.0 > 0.8 {
                wins += 1;
            }
        }
        assert_eq!(wins, 20);
    }
}
