//! Phase-shifter codebooks.
//!
//! A [`PhaseGrid`] holds the `2^B` phases `2πb/2^B, b = 1..2^B`; the last
//! one (2π) is reported as 0 after quantization. Each user contributes one
//! quantized transmit and one quantized receive steering vector per path,
//! and the exhaustive search walks every K-tuple of those through a
//! little-endian mixed-radix index (user 1 varies fastest).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, AnglePair, ArrayGeometry, CMatrix, CVector, PathSet, Sector};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseGrid {
    bits: u32,
}

impl PhaseGrid {
    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 24 {
            return Err(Error::invalid(format!("phase bits must be in 1..=24, got {bits}")));
        }
        Ok(PhaseGrid { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        1 << self.bits
    }

    pub fn step(&self) -> f64 {
        TWO_PI / self.levels() as f64
    }

    /// The grid `{2πb/2^B}` for `b = 1..2^B`, strictly increasing, ending at 2π.
    pub fn values(&self) -> Vec<f64> {
        (1..=self.levels()).map(|b| b as f64 * self.step()).collect()
    }

    /// Nearest level in `0..2^B` (level 0 is the grid point 2π).
    pub fn quantize_level(&self, phi: f64) -> usize {
        let m = self.levels();
        let x = phi.rem_euclid(TWO_PI) / self.step();
        let lo = x.floor();
        let frac = x - lo;
        let lo = lo as usize;
        let level = if frac < 0.5 {
            lo
        } else if frac > 0.5 {
            lo + 1
        } else if lo == 0 {
            // tie between 2π (index 2^B) and the first step (index 1)
            1
        } else {
            lo
        };
        level % m
    }

    /// Quantized phase in `[0, 2π)`.
    pub fn quantize(&self, phi: f64) -> f64 {
        self.quantize_level(phi) as f64 * self.step()
    }

    /// Whether `phi` (taken mod 2π) sits on the grid within `tol` radians.
    pub fn contains(&self, phi: f64, tol: f64) -> bool {
        let q = self.quantize(phi);
        let d = (phi.rem_euclid(TWO_PI) - q).abs();
        d.min(TWO_PI - d) <= tol
    }
}

pub fn quantize_phase(phi: f64, grid: &PhaseGrid) -> f64 {
    grid.quantize(phi)
}

/// Projects each entry onto the unit circle at its quantized phase.
pub fn quantize_vector(v: &CVector, grid: &PhaseGrid) -> Result<CVector> {
    if let Some(i) = v.iter().position(|z| z.norm() == 0.0) {
        return Err(Error::invalid(format!("entry {i} is zero, its phase is undefined")));
    }
    Ok(v.map(|z| Complex64::from_polar(1.0, grid.quantize(z.arg()))))
}

/// Uniform cell-centred angle grid over a sector.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

fn cell_centres(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let step = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect()
}

fn nearest(values: &[f64], x: f64) -> f64 {
    values
        .iter()
        .copied()
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
        .expect("grid axes are non-empty")
}

impl DirectionGrid {
    pub fn new(n_az: usize, n_el: usize, sector: &Sector) -> Result<Self> {
        if n_az == 0 || n_el == 0 {
            return Err(Error::invalid("direction grid needs at least one node per axis"));
        }
        Ok(DirectionGrid {
            azimuths: cell_centres(n_az, sector.azimuth),
            elevations: cell_centres(n_el, sector.elevation),
        })
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// All nodes, azimuth varying fastest.
    pub fn points(&self) -> Vec<AnglePair> {
        self.elevations
            .iter()
            .flat_map(|&el| self.azimuths.iter().map(move |&az| AnglePair::new(az, el)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.azimuths.len() * self.elevations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snap(&self, angle: AnglePair) -> AnglePair {
        AnglePair::new(
            nearest(&self.azimuths, angle.azimuth),
            nearest(&self.elevations, angle.elevation),
        )
    }
}

pub fn build_direction_grid(n_az: usize, n_el: usize, sector: &Sector) -> Result<Vec<AnglePair>> {
    Ok(DirectionGrid::new(n_az, n_el, sector)?.points())
}

/// Per-user feasible transmit and receive vectors (unit modulus, unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct UserCandidates {
    tx: Vec<CVector>,
    rx: Vec<CVector>,
}

impl UserCandidates {
    pub fn new(tx: Vec<CVector>, rx: Vec<CVector>) -> Result<Self> {
        if tx.is_empty() || rx.is_empty() {
            return Err(Error::invalid("each side needs at least one candidate"));
        }
        let uniform = |vs: &[CVector]| vs.iter().all(|v| v.len() == vs[0].len());
        if !uniform(&tx) || !uniform(&rx) {
            return Err(Error::invalid("candidate vectors on one side differ in length"));
        }
        Ok(UserCandidates { tx, rx })
    }

    pub fn tx(&self) -> &[CVector] {
        &self.tx
    }

    pub fn rx(&self) -> &[CVector] {
        &self.rx
    }

    pub fn side(&self, side: Side) -> &[CVector] {
        match side {
            Side::Tx => &self.tx,
            Side::Rx => &self.rx,
        }
    }

    pub fn count(&self, side: Side) -> usize {
        self.side(side).len()
    }

    /// Keeps at most `count` candidates per side (in path order).
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("candidate count must be at least 1"));
        }
        UserCandidates::new(
            self.tx.iter().take(count).cloned().collect(),
            self.rx.iter().take(count).cloned().collect(),
        )
    }

    /// Appends one candidate per side. Used to grow a feasible set.
    pub fn push(&mut self, tx: CVector, rx: CVector) {
        self.tx.push(tx);
        self.rx.push(rx);
    }
}

/// One quantized candidate per path, optionally snapping angles to a grid
/// first. Coincident paths yield duplicate candidates, which are kept.
pub fn build_user_candidates(
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    paths: &PathSet,
    grid: &PhaseGrid,
    snap: Option<&DirectionGrid>,
) -> Result<UserCandidates> {
    let place = |a: AnglePair| snap.map_or(a, |d| d.snap(a));
    let mut tx_c = Vec::with_capacity(paths.len());
    let mut rx_c = Vec::with_capacity(paths.len());
    for p in paths.paths() {
        tx_c.push(quantize_vector(&steering_vector(tx, place(p.tx_angle)), grid)?);
        rx_c.push(quantize_vector(&steering_vector(rx, place(p.rx_angle)), grid)?);
    }
    UserCandidates::new(tx_c, rx_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Tx,
    Rx,
}

/// Mixed-radix index space over per-user candidate counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationSpace {
    radices: Vec<usize>,
    size: usize,
}

impl CombinationSpace {
    pub fn new(radices: Vec<usize>) -> Result<Self> {
        if radices.is_empty() || radices.contains(&0) {
            return Err(Error::invalid("every user needs at least one candidate"));
        }
        let size = radices
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| Error::invalid("combination count overflows"))?;
        Ok(CombinationSpace { radices, size })
    }

    pub fn for_side(candidates: &[UserCandidates], side: Side) -> Result<Self> {
        Self::new(candidates.iter().map(|c| c.count(side)).collect())
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    /// `Q = Π_k C_k`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Decodes a 1-based index `q` into 1-based per-user selections.
    pub fn decode(&self, q: usize) -> Result<Vec<usize>> {
        if q == 0 || q > self.size {
            return Err(Error::invalid(format!(
                "combination index {q} outside [1, {}]",
                self.size
            )));
        }
        let mut rest = q - 1;
        Ok(self
            .radices
            .iter()
            .map(|&r| {
                let l = rest % r;
                rest /= r;
                l + 1
            })
            .collect())
    }

    pub fn encode(&self, selections: &[usize]) -> Result<usize> {
        if selections.len() != self.radices.len() {
            return Err(Error::invalid("selection length differs from user count"));
        }
        let mut q = 0usize;
        for (&l, &r) in selections.iter().zip(&self.radices).rev() {
            if l == 0 || l > r {
                return Err(Error::invalid(format!("selection {l} outside [1, {r}]")));
            }
            q = q * r + (l - 1);
        }
        Ok(q + 1)
    }
}

/// Column `k` is user `k`'s selected candidate for index `q` (1-based).
pub fn combination(q: usize, candidates: &[UserCandidates], side: Side) -> Result<CMatrix> {
    let space = CombinationSpace::for_side(candidates, side)?;
    let sel = space.decode(q)?;
    let columns: Vec<&CVector> = candidates
        .iter()
        .zip(&sel)
        .map(|(c, &l)| &c.side(side)[l - 1])
        .collect();
    let rows = columns[0].len();
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::invalid("users' candidate vectors differ in length"));
    }
    Ok(CMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Path;
    use crate::rng::seeded;

    const TOL: f64 = 1e-12;

    #[test]
    fn grid_values() {
        let g = PhaseGrid::new(2).unwrap();
        let v = g.values();
        assert_eq!(v.len(), 4);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!((v[3] - TWO_PI).abs() < TOL);
        assert!(PhaseGrid::new(0).is_err());
    }

    #[test]
    fn quantize_examples() {
        let g = PhaseGrid::new(2).unwrap();
        assert!((g.quantize(PI) - PI).abs() < TOL);
        // 0.1 wraps to 2π, stored as 0
        assert_eq!(g.quantize(0.1), 0.0);
        // tie at π/4 between 2π (b=4) and π/2 (b=1): smaller index wins
        assert!((g.quantize(PI / 4.0) - PI / 2.0).abs() < TOL);
        // tie at 3π/4 between π/2 (b=1) and π (b=2)
        assert!((g.quantize(3.0 * PI / 4.0) - PI / 2.0).abs() < TOL);
        assert!((g.quantize(-PI / 2.0) - 3.0 * PI / 2.0).abs() < TOL);
    }

    #[test]
    fn one_bit_grid() {
        let g = PhaseGrid::new(1).unwrap();
        for phi in [0.3, 1.7, 2.9, 4.0, 5.9] {
            let q = g.quantize(phi);
            assert!(q == 0.0 || (q - PI).abs() < TOL);
        }
    }

    #[test]
    fn quantize_vector_rejects_zero() {
        let g = PhaseGrid::new(3).unwrap();
        let v = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert!(quantize_vector(&v, &g).is_err());
    }

    #[test]
    fn quantize_vector_examples() {
        let g = PhaseGrid::new(8).unwrap();
        let ones = CVector::from_element(5, Complex64::new(1.0, 0.0));
        assert_eq!(quantize_vector(&ones, &g).unwrap(), ones);

        let v = CVector::from_vec(vec![Complex64::from_polar(1.0, 0.1), Complex64::from_polar(2.0, 3.2)]);
        let q = quantize_vector(&v, &g).unwrap();
        let step = TWO_PI / 256.0;
        for (i, phi) in [0.1f64, 3.2].into_iter().enumerate() {
            let expect = (phi / step).round() * step;
            assert!((q[i] - Complex64::from_polar(1.0, expect)).norm() < 1e-12);
            assert!((q[i].norm() - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn quantization_error_halves_per_bit() {
        let mut rng = seeded(5);
        let v = CVector::from_fn(64, |_, _| crate::geometry::complex_gaussian(&mut rng, 1.0));
        let unit = v.map(|z| z / z.norm());
        let err = |b: u32| (quantize_vector(&v, &PhaseGrid::new(b).unwrap()).unwrap() - &unit).norm();
        let errs: Vec<f64> = (4..=12).map(err).collect();
        // least-squares slope of log2(err) against B should be close to -1
        let n = errs.len() as f64;
        let xs: Vec<f64> = (4..=12).map(|b| b as f64).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn direction_grid_sizes() {
        let s = Sector::default();
        let one = build_direction_grid(1, 1, &s).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], s.center());
        assert_eq!(build_direction_grid(60, 20, &s).unwrap().len(), 1200);
        assert!(build_direction_grid(0, 3, &s).is_err());
    }

    #[test]
    fn snapping_moves_at_most_half_step() {
        let s = Sector::default();
        let d = DirectionGrid::new(60, 20, &s).unwrap();
        let az_step = (s.azimuth.1 - s.azimuth.0) / 60.0;
        let el_step = (s.elevation.1 - s.elevation.0) / 20.0;
        let mut rng = seeded(2);
        let angles = crate::geometry::sample_user_angles(&mut rng, &s, 5000).unwrap();
        for a in angles {
            let p = d.snap(a);
            assert!((p.azimuth - a.azimuth).abs() <= 0.5 * az_step + TOL);
            assert!((p.elevation - a.elevation).abs() <= 0.5 * el_step + TOL);
        }
    }

    fn arrays() -> (ArrayGeometry, ArrayGeometry) {
        (
            ArrayGeometry::with_elements(16).unwrap(),
            ArrayGeometry::with_elements(4).unwrap(),
        )
    }

    #[test]
    fn candidates_one_per_path() {
        let (tx, rx) = arrays();
        let mut rng = seeded(9);
        let g = PhaseGrid::new(3).unwrap();
        let ps = PathSet::sample(&mut rng, &Sector::default(), 1).unwrap();
        let c = build_user_candidates(&tx, &rx, &ps, &g, None).unwrap();
        assert_eq!((c.count(Side::Tx), c.count(Side::Rx)), (1, 1));

        let ps = PathSet::sample(&mut rng, &Sector::default(), 10).unwrap();
        let c = build_user_candidates(&tx, &rx, &ps, &g, None).unwrap();
        assert_eq!(c.tx().len(), 10);
        for v in c.tx().iter().chain(c.rx()) {
            for z in v.iter() {
                assert!((z.norm() - 1.0).abs() < TOL);
                assert!(g.contains(z.arg(), 1e-9));
            }
        }
    }

    #[test]
    fn duplicate_paths_keep_duplicate_candidates() {
        let (tx, rx) = arrays();
        let p = Path {
            gain: Complex64::new(1.0, 0.0),
            tx_angle: AnglePair::from_degrees(12.0, 3.0),
            rx_angle: AnglePair::from_degrees(-7.0, 1.0),
            tx_gain: 1.0,
            rx_gain: 1.0,
        };
        let ps = PathSet::new(vec![p, p]).unwrap();
        let c = build_user_candidates(&tx, &rx, &ps, &PhaseGrid::new(3).unwrap(), None).unwrap();
        assert_eq!(c.tx().len(), 2);
        assert_eq!(c.tx()[0], c.tx()[1]);
        assert_eq!(c.rx()[0], c.rx()[1]);
    }

    #[test]
    fn snapped_candidates_use_grid_angles() {
        let (tx, rx) = arrays();
        let s = Sector::default();
        let d = DirectionGrid::new(1, 1, &s).unwrap();
        let mut rng = seeded(10);
        let ps = PathSet::sample(&mut rng, &s, 3).unwrap();
        let g = PhaseGrid::new(4).unwrap();
        let c = build_user_candidates(&tx, &rx, &ps, &g, Some(&d)).unwrap();
        let centre = quantize_vector(&steering_vector(&tx, s.center()), &g).unwrap();
        assert!(c.tx().iter().all(|v| *v == centre));
    }

    #[test]
    fn mixed_radix_examples() {
        let space = CombinationSpace::new(vec![2, 3]).unwrap();
        assert_eq!(space.len(), 6);
        // enumerate little-endian by hand: user 1 fastest
        let expected = [[1, 1], [2, 1], [1, 2], [2, 2], [1, 3], [2, 3]];
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(space.decode(i + 1).unwrap(), e.to_vec());
            assert_eq!(space.encode(e).unwrap(), i + 1);
        }
        assert_eq!(space.decode(4).unwrap(), vec![2, 2]);
        assert!(space.decode(0).is_err());
        assert!(space.decode(7).is_err());
        assert_eq!(CombinationSpace::new(vec![10, 10, 10]).unwrap().len(), 1000);
    }

    #[test]
    fn combination_selects_columns() {
        let col = |v: f64, n: usize| CVector::from_element(n, Complex64::new(v, 0.0));
        let u1 = UserCandidates::new(vec![col(1.0, 3), col(2.0, 3)], vec![col(1.0, 2)]).unwrap();
        let u2 = UserCandidates::new(vec![col(3.0, 3), col(4.0, 3), col(5.0, 3)], vec![col(6.0, 2)]).unwrap();
        let c = vec![u1, u2];
        let m = combination(4, &c, Side::Tx).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(0, 0)].re, 2.0);
        assert_eq!(m[(0, 1)].re, 4.0);
        let w = combination(1, &c, Side::Rx).unwrap();
        assert_eq!(w.shape(), (2, 2));
        assert!(combination(2, &c, Side::Rx).is_err());
        assert!(combination(7, &c, Side::Tx).is_err());
    }
}
