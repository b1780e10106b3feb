//! Box and vector math shared by every other module: the action box, the
//! covering-ball metric, fixture collision geometry and the repulsive
//! potential field that stands in for a removed fixture.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Points closer than this to a face count as on the surface, not inside.
pub const SURFACE_EPS: f64 = 1e-12;

/// An axis-aligned box `[lower, upper]` in `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct ActionBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for ActionBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        Self::new(raw.lower, raw.upper)
    }
}

impl ActionBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("box needs at least one dimension".into()));
        }
        check_dim(lower.len(), upper.len())?;
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBox(format!("dimension {i} has a non-finite bound")));
            }
            if lo >= hi {
                return Err(Error::InvalidBox(format!(
                    "dimension {i}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit cube `[0, 1]^d`.
    pub fn unit(dims: usize) -> Self {
        Self {
            lower: vec![0.0; dims],
            upper: vec![1.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dims()
            && p
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn clip(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Maps a point of the box into `[0, 1]^d`.
    pub fn normalize(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| lo + x * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    ScaledLinf,
    ScaledL2,
}

/// Per-dimension scaled distance used for covering balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub scale: Vec<f64>,
}

impl Metric {
    pub fn new(kind: MetricKind, scale: Vec<f64>) -> Result<Self> {
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("metric scale must be positive, got {s}")));
        }
        Ok(Self { kind, scale })
    }

    /// Metric normalized by the box widths, so every box side has length 1.
    pub fn for_box(kind: MetricKind, b: &ActionBox) -> Self {
        Self {
            kind,
            scale: b.widths(),
        }
    }

    pub fn dims(&self) -> usize {
        self.scale.len()
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(self.dims(), a.len())?;
        check_dim(self.dims(), b.len())?;
        Ok(self.distance_unchecked(a, b))
    }

    /// Hot-path variant for callers that already validated dimensions.
    #[inline]
    pub fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let scaled = a
            .iter()
            .zip(b)
            .zip(&self.scale)
            .map(|((x, y), s)| (x - y).abs() / s);
        match self.kind {
            MetricKind::ScaledLinf => scaled.fold(0.0, f64::max),
            MetricKind::ScaledL2 => scaled.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Free function form of [`Metric::distance`].
pub fn distance(m: &Metric, a: &[f64], b: &[f64]) -> Result<f64> {
    m.distance(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureShape {
    /// Vertical slab set into the table. Pose `(x, y, θ)` is the center of
    /// the contact face; the slab extends from that face along
    /// `(sin θ, −cos θ)` and its long axis is `(cos θ, sin θ)`. Extent is
    /// `(half_length, half_thickness, half_height)`; it spans heights
    /// `−half_height..half_height`, so it is solid at table level `z = 0`.
    WallSegment,
    /// Horizontal slab whose top face is centered at pose `(x, y, z)`.
    /// Extent is `(half_x, half_y, half_thickness)`.
    SupportPlane,
    /// Axis-aligned block centered at pose `(x, y, z)`. Extent is the three
    /// half-lengths.
    CornerBlock,
}

/// A rigid fixture placed in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureGeometry {
    pub shape: FixtureShape,
    pub pose: Vec<f64>,
    pub extent: Vec<f64>,
    pub active: bool,
}

impl FixtureGeometry {
    pub fn new(shape: FixtureShape, pose: Vec<f64>, extent: Vec<f64>) -> Result<Self> {
        check_dim(3, pose.len())?;
        check_dim(3, extent.len())?;
        if let Some(e) = extent.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig(format!("fixture extents must be positive, got {e}")));
        }
        if pose.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("fixture pose must be finite".into()));
        }
        Ok(Self {
            shape,
            pose,
            extent,
            active: true,
        })
    }

    pub fn wall(x: f64, y: f64, theta: f64, half_length: f64, half_thickness: f64, half_height: f64) -> Result<Self> {
        Self::new(
            FixtureShape::WallSegment,
            vec![x, y, theta],
            vec![half_length, half_thickness, half_height],
        )
    }

    /// Same fixture moved by `offset` (a world translation).
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let mut g = self.clone();
        match self.shape {
            FixtureShape::WallSegment => {
                g.pose[0] += offset[0];
                g.pose[1] += offset[1];
                // walls always stand on the table; vertical offsets are ignored
            }
            FixtureShape::SupportPlane | FixtureShape::CornerBlock => {
                for (p, o) in g.pose.iter_mut().zip(offset) {
                    *p += o;
                }
            }
        }
        g
    }

    /// The configuration-space obstacle for a round effector of horizontal
    /// radius `r`: the fixture grown by `r` in the table plane.
    pub fn inflated(&self, r: f64) -> Self {
        let mut g = self.clone();
        match self.shape {
            FixtureShape::WallSegment => {
                let theta = self.pose[2];
                g.pose[0] -= theta.sin() * r;
                g.pose[1] += theta.cos() * r;
                g.extent[0] += r;
                g.extent[1] += r;
            }
            FixtureShape::SupportPlane | FixtureShape::CornerBlock => {
                g.extent[0] += r;
                g.extent[1] += r;
            }
        }
        g
    }

    pub(crate) fn oriented_box(&self) -> OrientedBox {
        match self.shape {
            FixtureShape::WallSegment => {
                let (x, y, theta) = (self.pose[0], self.pose[1], self.pose[2]);
                let ht = self.extent[1];
                let hh = self.extent[2];
                OrientedBox {
                    center: [x + theta.sin() * ht, y - theta.cos() * ht, 0.0],
                    yaw: theta,
                    half: [self.extent[0], ht, hh],
                }
            }
            FixtureShape::SupportPlane => OrientedBox {
                center: [self.pose[0], self.pose[1], self.pose[2] - self.extent[2]],
                yaw: 0.0,
                half: [self.extent[0], self.extent[1], self.extent[2]],
            },
            FixtureShape::CornerBlock => OrientedBox {
                center: [self.pose[0], self.pose[1], self.pose[2]],
                yaw: 0.0,
                half: [self.extent[0], self.extent[1], self.extent[2]],
            },
        }
    }

    /// True when `p` lies strictly inside the fixture (beyond [`SURFACE_EPS`]).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.active && self.oriented_box().strictly_inside(p)
    }

    /// Euclidean distance from `p` to the fixture surface (0 inside).
    pub fn surface_distance(&self, p: [f64; 3]) -> f64 {
        self.oriented_box().closest(p).0
    }
}

/// A box rotated about the vertical axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OrientedBox {
    center: [f64; 3],
    yaw: f64,
    half: [f64; 3],
}

impl OrientedBox {
    fn local_coords(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    fn world_coords(&self, l: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * l[0] - s * l[1],
            self.center[1] + s * l[0] + c * l[1],
            self.center[2] + l[2],
        ]
    }

    fn rotate_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    }

    fn strictly_inside(&self, p: [f64; 3]) -> bool {
        let l = self.local_coords(p);
        (0..3).all(|i| l[i].abs() < self.half[i] - SURFACE_EPS)
    }

    /// Axis and signed direction of the face with the least penetration.
    fn nearest_face(&self, l: [f64; 3]) -> (usize, f64) {
        let mut best = 0;
        let mut best_depth = f64::INFINITY;
        for i in 0..3 {
            let depth = self.half[i] - l[i].abs();
            if depth < best_depth {
                best_depth = depth;
                best = i;
            }
        }
        let sign = if l[best] < 0.0 { -1.0 } else { 1.0 };
        (best, sign)
    }

    /// Returns (distance to surface, outward unit normal).
    fn closest(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let l = self.local_coords(p);
        let mut outside = [0.0; 3];
        let mut any_outside = false;
        for i in 0..3 {
            let excess = l[i].abs() - self.half[i];
            if excess > 0.0 {
                outside[i] = excess * l[i].signum();
                any_outside = true;
            }
        }
        if any_outside {
            let d = (outside[0].powi(2) + outside[1].powi(2) + outside[2].powi(2)).sqrt();
            if d > SURFACE_EPS {
                let n = [outside[0] / d, outside[1] / d, outside[2] / d];
                return (d, self.rotate_to_world(n));
            }
        }
        let (axis, sign) = self.nearest_face(l);
        let mut n = [0.0; 3];
        n[axis] = sign;
        (0.0, self.rotate_to_world(n))
    }

    fn push_out(&self, p: [f64; 3]) -> [f64; 3] {
        if !self.strictly_inside(p) {
            return p;
        }
        let mut l = self.local_coords(p);
        let (axis, sign) = self.nearest_face(l);
        l[axis] = sign * self.half[axis];
        self.world_coords(l)
    }
}

/// Moves a point that ended up inside an active fixture onto the nearest
/// face, keeping the tangential components (the effector slides along the
/// fixture). Points outside, and inactive fixtures, pass through unchanged.
pub fn project_out_of_fixture(p: [f64; 3], g: &FixtureGeometry) -> [f64; 3] {
    if !g.active {
        return p;
    }
    g.oriented_box().push_out(p)
}

/// Repulsive field with the same geometry as a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub geometry: FixtureGeometry,
    pub gain: f64,
    pub cutoff: f64,
    pub exponent: u32,
    /// Magnitude clamp; defaults to `10 · gain / cutoff^exponent`.
    pub max_force: Option<f64>,
}

impl PotentialField {
    pub fn new(geometry: FixtureGeometry, gain: f64, cutoff: f64, exponent: u32) -> Result<Self> {
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(Error::InvalidConfig(format!("field gain must be >= 0, got {gain}")));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::InvalidConfig(format!("field cutoff must be > 0, got {cutoff}")));
        }
        if exponent == 0 {
            return Err(Error::InvalidConfig("field exponent must be >= 1".into()));
        }
        Ok(Self {
            geometry,
            gain,
            cutoff,
            exponent,
            max_force: None,
        })
    }

    pub fn force_limit(&self) -> f64 {
        self.max_force
            .unwrap_or(10.0 * self.gain / self.cutoff.powi(self.exponent as i32))
    }

    /// Force magnitude at surface distance `d`.
    pub fn magnitude_at(&self, d: f64) -> f64 {
        if d >= self.cutoff {
            return 0.0;
        }
        let limit = self.force_limit();
        if d <= 0.0 {
            return limit;
        }
        let k = self.exponent as i32;
        let raw = self.gain * (1.0 / d.powi(k) - 1.0 / self.cutoff.powi(k));
        raw.min(limit)
    }
}

/// Repulsive force on a point at `p`, directed along the outward surface
/// normal. Zero beyond the cutoff; clamped at contact.
pub fn potential_force(p: [f64; 3], f: &PotentialField) -> [f64; 3] {
    if !f.geometry.active || f.gain == 0.0 {
        return [0.0; 3];
    }
    let (d, n) = f.geometry.oriented_box().closest(p);
    let m = f.magnitude_at(d);
    if m == 0.0 {
        return [0.0; 3];
    }
    [m * n[0], m * n[1], m * n[2]]
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linf(scale: Vec<f64>) -> Metric {
        Metric::new(MetricKind::ScaledLinf, scale).unwrap()
    }

    #[test]
    fn distance_examples() {
        let m = linf(vec![1.0, 1.0]);
        assert_eq!(m.distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        let m = linf(vec![2.0, 2.0]);
        assert_eq!(m.distance(&[0.0, 0.0], &[2.0, 1.0]).unwrap(), 1.0);
        let m = Metric::new(MetricKind::ScaledL2, vec![1.0, 1.0]).unwrap();
        assert_eq!(m.distance(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let m = linf(vec![1.0, 1.0]);
        assert!(matches!(
            m.distance(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn box_validation() {
        assert!(ActionBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(ActionBox::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(ActionBox::new(vec![f64::NEG_INFINITY], vec![1.0]).is_err());
        assert!(ActionBox::new(vec![], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn metric_axioms(
            a in prop::collection::vec(-5.0f64..5.0, 3),
            b in prop::collection::vec(-5.0f64..5.0, 3),
            c in prop::collection::vec(-5.0f64..5.0, 3),
            l2 in any::<bool>(),
        ) {
            let kind = if l2 { MetricKind::ScaledL2 } else { MetricKind::ScaledLinf };
            let m = Metric::new(kind, vec![0.5, 2.0, 1.5]).unwrap();
            let ab = m.distance(&a, &b).unwrap();
            prop_assert!((ab - m.distance(&b, &a).unwrap()).abs() <= 1e-12);
            prop_assert_eq!(m.distance(&a, &a).unwrap(), 0.0);
            let ac = m.distance(&a, &c).unwrap();
            let cb = m.distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    fn plus_x_wall() -> FixtureGeometry {
        // face at x = 0 with outward normal -x; the slab occupies x in [0, 0.02]
        FixtureGeometry::wall(0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.05, 0.01, 0.05).unwrap()
    }

    #[test]
    fn projection_leaves_outside_points() {
        let g = plus_x_wall();
        let p = [-0.01, 0.003, 0.02];
        assert_eq!(project_out_of_fixture(p, &g), p);
    }

    #[test]
    fn projection_pushes_through_nearest_face() {
        // Axis-aligned block so the shift is exact: outward normal of the
        // nearest face is +x, penetration 0.01.
        let g = FixtureGeometry::new(FixtureShape::CornerBlock, vec![0.0, 0.0, 0.0], vec![0.1, 0.5, 0.5])
            .unwrap();
        let p = [0.09, 0.2, -0.1];
        let q = project_out_of_fixture(p, &g);
        assert!((q[0] - 0.1).abs() < 1e-15);
        assert_eq!(q[1], p[1]);
        assert_eq!(q[2], p[2]);

        // Rotated wall: the contact face at x = 0 is the -x face of the slab.
        let w = plus_x_wall();
        let q = project_out_of_fixture([0.002, 0.01, 0.03], &w);
        assert!((q[0] - 0.0).abs() < 1e-12);
        assert!((q[1] - 0.01).abs() < 1e-12);
        assert!((q[2] - 0.03).abs() < 1e-12);
    }

    #[test]
    fn projection_idempotent_and_never_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shapes = [
            FixtureGeometry::wall(0.01, -0.004, 1.3, 0.02, 0.006, 0.03).unwrap(),
            FixtureGeometry::new(FixtureShape::SupportPlane, vec![0.0, 0.0, 0.0], vec![0.02, 0.03, 0.005]).unwrap(),
            FixtureGeometry::new(FixtureShape::CornerBlock, vec![0.01, 0.0, 0.01], vec![0.01, 0.02, 0.01]).unwrap(),
        ];
        let region = ActionBox::new(vec![-0.05; 3], vec![0.05; 3]).unwrap();
        for g in &shapes {
            for _ in 0..10_000 {
                let p = region.sample_uniform(&mut rng);
                let p = [p[0], p[1], p[2]];
                let q = project_out_of_fixture(p, g);
                assert!(!g.contains(q), "{q:?} inside {g:?}");
                assert_eq!(project_out_of_fixture(q, g), q);
            }
        }
    }

    #[test]
    fn inactive_fixture_is_transparent() {
        let mut g = plus_x_wall();
        g.active = false;
        let p = [0.005, 0.0, 0.01];
        assert_eq!(project_out_of_fixture(p, &g), p);
    }

    #[test]
    fn inflation_moves_contact_face() {
        let g = plus_x_wall().inflated(0.0075);
        let q = project_out_of_fixture([-0.001, 0.0, 0.01], &g);
        assert!((q[0] + 0.0075).abs() < 1e-12);
    }

    fn block_field(gain: f64, cutoff: f64, exponent: u32) -> PotentialField {
        let g = FixtureGeometry::new(FixtureShape::CornerBlock, vec![0.0, 0.0, 0.0], vec![0.01, 0.01, 0.01])
            .unwrap();
        PotentialField::new(g, gain, cutoff, exponent).unwrap()
    }

    #[test]
    fn force_beyond_cutoff_is_zero() {
        let f = block_field(1.0, 0.02, 1);
        assert_eq!(potential_force([0.0300001, 0.0, 0.0], &f), [0.0; 3]);
        assert_eq!(potential_force([0.01 + 0.5, 0.0, 0.0], &f), [0.0; 3]);
    }

    #[test]
    fn force_at_half_cutoff() {
        let cutoff = 0.02;
        let f = block_field(1.0, cutoff, 1);
        let v = potential_force([0.01 + cutoff / 2.0, 0.0, 0.0], &f);
        assert!((v[0] - 1.0 / cutoff).abs() < 1e-9);
        assert!(v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn force_monotone_and_clamped() {
        for gain in [0.1, 1.0, 7.5] {
            let f = block_field(gain, 0.05, 2);
            let near = norm3(potential_force([0.01 + 0.01, 0.0, 0.0], &f));
            let far = norm3(potential_force([0.01 + 0.02, 0.0, 0.0], &f));
            assert!(near > far);
        }
        let f = block_field(1.0, 0.05, 1);
        let inside = potential_force([0.0099, 0.0, 0.0], &f);
        assert!((norm3(inside) - 10.0 / 0.05).abs() < 1e-9);
        assert!(inside[0] > 0.0);
        let on_surface = potential_force([0.01, 0.0, 0.0], &f);
        assert!((norm3(on_surface) - f.force_limit()).abs() < 1e-9);
        let zero_gain = block_field(0.0, 0.05, 1);
        assert_eq!(potential_force([0.011, 0.0, 0.0], &zero_gain), [0.0; 3]);
    }

    proptest! {
        #[test]
        fn force_magnitude_nonincreasing(d1 in 0.0f64..0.1, d2 in 0.0f64..0.1, k in 1u32..4) {
            let f = block_field(0.3, 0.06, k);
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(f.magnitude_at(lo) >= f.magnitude_at(hi));
        }
    }
}
