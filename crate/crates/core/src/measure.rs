//! Probability measures on a regular grid of the flat torus.
//!
//! Points are stored as `[f64; 2]`; for one-dimensional grids the second
//! component is always zero. Sites are numbered row-major, axis 0 first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::TransportPlan;

/// A point or vector on the torus. Unused axes are zero.
pub type Coords = [f64; 2];

/// Absolute tolerance on the total mass of a [`GridMeasure`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Reduces a real to its minimal periodic representative in (-1/2, 1/2].
#[inline]
pub fn minimal_image(v: f64) -> f64 {
    v - (v - 0.5).ceil()
}

#[inline]
pub(crate) fn wrap_unit(v: f64) -> f64 {
    let w = v - v.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[inline]
pub(crate) fn norm(v: &Coords) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Euclidean length of the minimal-image displacement between two torus points.
pub fn periodic_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| minimal_image(b - a).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::param("dim", format!("must be 1 or 2, got {dim}")));
        }
        if n < 2 {
            return Err(Error::param("n", format!("must be >= 2, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn multi_index(&self, site: usize) -> [usize; 2] {
        if self.dim == 1 {
            [site, 0]
        } else {
            [site / self.n, site % self.n]
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.n + idx[1]
        }
    }

    pub fn coords(&self, site: usize) -> Coords {
        let [a, b] = self.multi_index(site);
        let h = self.spacing();
        [a as f64 * h, b as f64 * h]
    }

    /// Minimal-image displacement from site `from` to site `to`.
    pub fn displacement(&self, from: usize, to: usize) -> Coords {
        let x = self.coords(from);
        let y = self.coords(to);
        [minimal_image(y[0] - x[0]), minimal_image(y[1] - x[1])]
    }

    pub fn distance(&self, from: usize, to: usize) -> f64 {
        norm(&self.displacement(from, to))
    }

    fn snap_axis(&self, c: f64) -> usize {
        let u = wrap_unit(c) * self.n as f64;
        let k = u.floor();
        let frac = u - k;
        let k = k as usize % self.n;
        let up = (k + 1) % self.n;
        if frac > 0.5 {
            up
        } else if frac < 0.5 {
            k
        } else {
            k.min(up)
        }
    }

    /// Nearest grid site to an arbitrary torus point; exact ties go to the
    /// smaller index along each axis.
    pub fn snap(&self, point: &Coords) -> usize {
        let a = self.snap_axis(point[0]);
        let b = if self.dim == 2 {
            self.snap_axis(point[1])
        } else {
            0
        };
        self.flat_index([a, b])
    }

    /// Number of whole sites a shift spans along each axis, or an error if
    /// the shift is not grid-aligned.
    fn aligned_steps(&self, shift: &TorusDisplacement) -> Result<[i64; 2]> {
        let mut steps = [0i64; 2];
        for (axis, step) in steps.iter_mut().enumerate().take(self.dim) {
            let s = shift.vector[axis] * self.n as f64;
            let r = s.round();
            if (s - r).abs() > 1e-9 {
                return Err(Error::NotGridAligned {
                    shift: shift.vector[axis],
                    n: self.n,
                });
            }
            *step = r as i64;
        }
        Ok(steps)
    }

    /// Site reached from `site` after moving `steps` sites along each axis.
    pub(crate) fn shifted_site(&self, site: usize, steps: [i64; 2]) -> usize {
        let idx = self.multi_index(site);
        let n = self.n as i64;
        let mut out = [0usize; 2];
        for axis in 0..self.dim {
            out[axis] = (idx[axis] as i64 + steps[axis]).rem_euclid(n) as usize;
        }
        self.flat_index(out)
    }
}

/// Minimal-image vector with every component in (-1/2, 1/2].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusDisplacement {
    dim: usize,
    vector: Coords,
}

impl TorusDisplacement {
    pub fn new(components: &[f64]) -> Result<Self> {
        if !(1..=2).contains(&components.len()) {
            return Err(Error::param(
                "displacement",
                format!("expected 1 or 2 components, got {}", components.len()),
            ));
        }
        let mut vector = [0.0; 2];
        for (v, c) in vector.iter_mut().zip(components) {
            if !c.is_finite() {
                return Err(Error::param("displacement", "components must be finite"));
            }
            *v = minimal_image(*c);
        }
        Ok(Self {
            dim: components.len(),
            vector,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self) -> Coords {
        self.vector
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vector)
    }
}

/// Nonnegative weights on the sites of a [`TorusGrid`], summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct GridMeasure {
    grid: TorusGrid,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    dim: usize,
    n: usize,
    weights: Vec<f64>,
}

impl TryFrom<MeasureRepr> for GridMeasure {
    type Error = Error;

    fn try_from(r: MeasureRepr) -> Result<Self> {
        GridMeasure::new(TorusGrid::new(r.dim, r.n)?, r.weights)
    }
}

impl From<GridMeasure> for MeasureRepr {
    fn from(m: GridMeasure) -> Self {
        MeasureRepr {
            dim: m.grid.dim,
            n: m.grid.n,
            weights: m.weights,
        }
    }
}

impl GridMeasure {
    pub fn new(grid: TorusGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.sites() {
            return Err(Error::InvalidMeasure(format!(
                "expected {} weights, got {}",
                grid.sites(),
                weights.len()
            )));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidMeasure(format!("weight {i} is {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { grid, weights })
    }

    /// Normalizes arbitrary nonnegative weights to unit mass.
    pub fn from_unnormalized(grid: TorusGrid, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(grid, weights)
    }

    pub fn dirac(grid: TorusGrid, site: usize) -> Result<Self> {
        if site >= grid.sites() {
            return Err(Error::SiteOutOfRange {
                index: site,
                sites: grid.sites(),
            });
        }
        let mut weights = vec![0.0; grid.sites()];
        weights[site] = 1.0;
        Ok(Self { grid, weights })
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        let n = grid.sites();
        Self {
            grid,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, site: usize) -> f64 {
        self.weights[site]
    }

    /// Sites carrying positive mass, in increasing order.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
    }

    pub fn ensure_same_grid(&self, other: &GridMeasure) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: format!("{:?}", self.grid),
                right: format!("{:?}", other.grid),
            });
        }
        Ok(())
    }

    /// Exact pushforward by a grid-aligned translation: a cyclic permutation of weights.
    pub fn pushforward_translate(&self, shift: &TorusDisplacement) -> Result<Self> {
        if shift.dim() != self.grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.dim(),
                got: shift.dim(),
            });
        }
        let steps = self.grid.aligned_steps(shift)?;
        Ok(self.shift_by_sites(steps))
    }

    pub(crate) fn shift_by_sites(&self, steps: [i64; 2]) -> Self {
        let mut weights = vec![0.0; self.weights.len()];
        for (site, w) in self.weights.iter().enumerate() {
            weights[self.grid.shifted_site(site, steps)] = *w;
        }
        Self {
            grid: self.grid,
            weights,
        }
    }

    /// Translation by an arbitrary offset, rounded to the nearest whole number
    /// of sites per axis (exact halves round down). Mass bookkeeping stays exact.
    pub fn translate_snapped(&self, offset: &Coords) -> Self {
        let n = self.grid.n as f64;
        let mut steps = [0i64; 2];
        for axis in 0..self.grid.dim {
            let u = offset[axis] * n;
            let k = u.floor();
            steps[axis] = if u - k > 0.5 { k as i64 + 1 } else { k as i64 };
        }
        self.shift_by_sites(steps)
    }

    /// Pushforward by an arbitrary site map.
    pub fn pushforward_sites(&self, map: &[usize]) -> Result<Self> {
        if map.len() != self.weights.len() {
            return Err(Error::param(
                "site map",
                format!("expected {} entries, got {}", self.weights.len(), map.len()),
            ));
        }
        let mut weights = vec![0.0; self.weights.len()];
        for (site, w) in self.weights.iter().enumerate() {
            let to = map[site];
            if to >= weights.len() {
                return Err(Error::SiteOutOfRange {
                    index: to,
                    sites: weights.len(),
                });
            }
            weights[to] += *w;
        }
        Ok(Self {
            grid: self.grid,
            weights,
        })
    }

    /// Mixture of measures with the given nonnegative coefficients.
    pub fn mixture(parts: &[(f64, &GridMeasure)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("mixture", "no components"))?
            .1;
        let mut weights = vec![0.0; first.weights.len()];
        for (coef, m) in parts {
            first.ensure_same_grid(m)?;
            for (acc, w) in weights.iter_mut().zip(&m.weights) {
                *acc += coef * w;
            }
        }
        Self::from_unnormalized(first.grid, weights)
    }

    /// Largest absolute weight difference.
    pub fn max_abs_diff(&self, other: &GridMeasure) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Places the mass of every plan entry at `x + s (y - x)` along the
/// minimal-image segment and snaps it to the nearest site.
pub fn displacement_interpolate(plan: &TransportPlan, s: f64) -> Result<GridMeasure> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::param("s", format!("must lie in [0, 1], got {s}")));
    }
    let grid = plan.source().grid();
    let mut weights = vec![0.0; grid.sites()];
    plan.coupling().for_each_entry(|i, j, mass| {
        let site = if s == 0.0 {
            i
        } else if s == 1.0 {
            j
        } else {
            let x = grid.coords(i);
            let d = grid.displacement(i, j);
            grid.snap(&[x[0] + s * d[0], x[1] + s * d[1]])
        };
        weights[site] += mass;
    });
    GridMeasure::new(grid, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn periodic_distance_examples() {
        assert_eq!(periodic_distance(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((periodic_distance(&[0.0], &[0.9]).unwrap() - 0.1).abs() < 1e-15);
        let d = periodic_distance(&[0.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            periodic_distance(&[0.0], &[0.0, 0.1]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn minimal_image_breaks_ties_toward_positive() {
        assert_eq!(minimal_image(0.5), 0.5);
        assert_eq!(minimal_image(-0.5), 0.5);
        assert_eq!(minimal_image(0.75), -0.25);
        assert_eq!(minimal_image(-0.25), -0.25);
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(TorusGrid::new(3, 4).is_err());
        assert!(TorusGrid::new(1, 1).is_err());
        let g = TorusGrid::new(2, 3).unwrap();
        assert_eq!(g.sites(), 9);
        assert!((0..9).all(|s| g.coords(s).iter().all(|c| (0.0..1.0).contains(c))));
    }

    #[test]
    fn dirac_and_uniform() {
        let m = GridMeasure::dirac(g1(4), 2).unwrap();
        assert_eq!(m.weights(), &[0.0, 0.0, 1.0, 0.0]);
        let m = GridMeasure::dirac(g1(2), 0).unwrap();
        assert_eq!(m.weights(), &[1.0, 0.0]);
        assert!(matches!(
            GridMeasure::dirac(g1(4), 4),
            Err(Error::SiteOutOfRange { .. })
        ));
        assert_eq!(GridMeasure::uniform(g1(4)).weights(), &[0.25; 4]);
        let u2 = GridMeasure::uniform(TorusGrid::new(2, 2).unwrap());
        assert_eq!(u2.weights(), &[0.25; 4]);
    }

    #[test]
    fn measure_validation() {
        assert!(GridMeasure::new(g1(2), vec![0.5, 0.6]).is_err());
        assert!(GridMeasure::new(g1(2), vec![1.5, -0.5]).is_err());
        assert!(GridMeasure::new(g1(2), vec![1.0]).is_err());
    }

    #[test]
    fn translate_examples() {
        let m = GridMeasure::new(g1(4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let quarter = TorusDisplacement::new(&[0.25]).unwrap();
        assert_eq!(
            m.pushforward_translate(&quarter).unwrap().weights(),
            &[0.0, 1.0, 0.0, 0.0]
        );
        let r = GridMeasure::new(g1(4), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let zero = TorusDisplacement::new(&[0.0]).unwrap();
        assert_eq!(r.pushforward_translate(&zero).unwrap(), r);
        let mut cur = r.clone();
        for _ in 0..4 {
            cur = cur.pushforward_translate(&quarter).unwrap();
        }
        assert_eq!(cur, r);
        let bad = TorusDisplacement::new(&[0.1]).unwrap();
        assert!(matches!(
            r.pushforward_translate(&bad),
            Err(Error::NotGridAligned { .. })
        ));
    }

    #[test]
    fn snapping_ties_go_to_smaller_index() {
        let g = g1(4);
        assert_eq!(g.snap(&[0.125, 0.0]), 0);
        assert_eq!(g.snap(&[0.126, 0.0]), 1);
        // 0.875 sits between site 3 and site 0 (wrapped)
        assert_eq!(g.snap(&[0.875, 0.0]), 0);
        assert_eq!(g.snap(&[-0.01, 0.0]), 0);
        assert_eq!(g.snap(&[0.99, 0.0]), 0);
    }

    #[test]
    fn json_shape() {
        let m = GridMeasure::dirac(g1(2), 1).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"dim":1,"n":2,"weights":[0.0,1.0]}"#);
        let back: GridMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<GridMeasure>(r#"{"dim":1,"n":2,"weights":[0.5]}"#).is_err());
    }
}
