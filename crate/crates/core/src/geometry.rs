//! Array geometry, steering vectors and the geometric multipath channel.
//!
//! Arrays are uniform planar grids in the y–z plane, so boresight is the +x
//! axis. Angles are (azimuth, elevation) pairs and map to unit direction
//! vectors `[cos el cos az, cos el sin az, sin el]`. Positions are expressed
//! in carrier wavelengths, which makes the steering phase of element `n`
//! simply `-2π pₙ·r`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default element spacing: half a wavelength.
pub const HALF_WAVELENGTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    n_x: usize,
    n_y: usize,
    spacing: f64,
    positions: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Near-square UPA with `count` elements and half-wavelength spacing.
    pub fn with_elements(count: usize) -> Result<Self> {
        let (n_x, n_y) = near_square_factors(count)?;
        build_upa(n_x, n_y, HALF_WAVELENGTH)
    }
}

/// Splits `count` into `n_x · n_y` with `n_x ≥ n_y` as close to square as
/// the divisors allow (36 → 6×6, 12 → 4×3, 8 → 4×2).
pub fn near_square_factors(count: usize) -> Result<(usize, usize)> {
    if count == 0 {
        return Err(Error::invalid("array must have at least one element"));
    }
    let mut n_y = (count as f64).sqrt().floor() as usize;
    while n_y > 1 && !count.is_multiple_of(n_y) {
        n_y -= 1;
    }
    let n_y = n_y.max(1);
    Ok((count / n_y, n_y))
}

/// Builds an `n_x × n_y` grid; element `(i, j)` sits at `[0, i·d, j·d]` and
/// is stored at flat index `i + j·n_x`.
pub fn build_upa(n_x: usize, n_y: usize, spacing: f64) -> Result<ArrayGeometry> {
    if n_x == 0 || n_y == 0 {
        return Err(Error::invalid(format!(
            "array dimensions must be positive, got {n_x}x{n_y}"
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!(
            "element spacing must be positive, got {spacing}"
        )));
    }
    let positions = (0..n_y)
        .flat_map(|j| (0..n_x).map(move |i| [0.0, i as f64 * spacing, j as f64 * spacing]))
        .collect();
    Ok(ArrayGeometry {
        n_x,
        n_y,
        spacing,
        positions,
    })
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub azimuth: f64,
    pub elevation: f64,
}

impl AnglePair {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        AnglePair {
            azimuth: wrap_angle(azimuth),
            elevation: wrap_angle(elevation),
        }
    }

    pub fn from_degrees(azimuth: f64, elevation: f64) -> Self {
        Self::new(azimuth.to_radians(), elevation.to_radians())
    }

    pub const BORESIGHT: AnglePair = AnglePair {
        azimuth: 0.0,
        elevation: 0.0,
    };
}

pub fn direction_vector(angle: AnglePair) -> [f64; 3] {
    let (sa, ca) = angle.azimuth.sin_cos();
    let (se, ce) = angle.elevation.sin_cos();
    [ce * ca, ce * sa, se]
}

/// Unnormalized (unit-modulus) array response.
pub fn steering_vector(geom: &ArrayGeometry, angle: AnglePair) -> CVector {
    let r = direction_vector(angle);
    CVector::from_iterator(
        geom.len(),
        geom.positions.iter().map(|p| {
            let proj = p[0] * r[0] + p[1] * r[1] + p[2] * r[2];
            Complex64::from_polar(1.0, -2.0 * PI * proj)
        }),
    )
}

/// Closed azimuth × elevation interval in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
}

impl Sector {
    pub fn from_degrees(azimuth: (f64, f64), elevation: (f64, f64)) -> Self {
        Sector {
            azimuth: (azimuth.0.to_radians(), azimuth.1.to_radians()),
            elevation: (elevation.0.to_radians(), elevation.1.to_radians()),
        }
    }

    /// Symmetric sector `±az × ±el` degrees.
    pub fn symmetric_degrees(az: f64, el: f64) -> Self {
        Self::from_degrees((-az, az), (-el, el))
    }

    pub fn contains(&self, angle: AnglePair) -> bool {
        const SLACK: f64 = 1e-12;
        angle.azimuth >= self.azimuth.0 - SLACK
            && angle.azimuth <= self.azimuth.1 + SLACK
            && angle.elevation >= self.elevation.0 - SLACK
            && angle.elevation <= self.elevation.1 + SLACK
    }

    pub fn center(&self) -> AnglePair {
        AnglePair::new(
            0.5 * (self.azimuth.0 + self.azimuth.1),
            0.5 * (self.elevation.0 + self.elevation.1),
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if ok(self.azimuth) && ok(self.elevation) {
            Ok(())
        } else {
            Err(Error::invalid(format!("empty or non-finite sector {self:?}")))
        }
    }
}

impl Default for Sector {
    /// ±30° azimuth, ±20° elevation.
    fn default() -> Self {
        Sector::symmetric_degrees(30.0, 20.0)
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn sample_user_angles<R: Rng + ?Sized>(rng: &mut R, sector: &Sector, count: usize) -> Result<Vec<AnglePair>> {
    sector.validate()?;
    if count == 0 {
        return Err(Error::invalid("path count must be at least 1"));
    }
    Ok((0..count)
        .map(|_| {
            let az = uniform_in(rng, sector.azimuth);
            let el = uniform_in(rng, sector.elevation);
            AnglePair::new(az, el)
        })
        .collect())
}

/// Circular complex Gaussian draw with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub tx_angle: AnglePair,
    pub rx_angle: AnglePair,
    pub tx_gain: f64,
    pub rx_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("a path set needs at least one path"));
        }
        if paths.iter().any(|p| !(p.gain.re.is_finite() && p.gain.im.is_finite())) {
            return Err(Error::invalid("path gains must be finite"));
        }
        Ok(PathSet { paths })
    }

    /// Draws `count` paths: departure and arrival angles uniform in the
    /// sector, unit-variance circular Gaussian gains, sector element gains.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, sector: &Sector, count: usize) -> Result<Self> {
        let tx = sample_user_angles(rng, sector, count)?;
        let rx = sample_user_angles(rng, sector, count)?;
        let paths = tx
            .into_iter()
            .zip(rx)
            .map(|(tx_angle, rx_angle)| Path {
                gain: complex_gaussian(rng, 1.0),
                tx_angle,
                rx_angle,
                tx_gain: sector_gain(sector, tx_angle),
                rx_gain: sector_gain(sector, rx_angle),
            })
            .collect();
        PathSet::new(paths)
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn scale_gains(&self, factor: f64) -> PathSet {
        PathSet {
            paths: self
                .paths
                .iter()
                .map(|p| Path {
                    gain: p.gain * factor,
                    ..*p
                })
                .collect(),
        }
    }
}

/// Sectorized element gain: one inside the sector, zero outside.
pub fn sector_gain(sector: &Sector, angle: AnglePair) -> f64 {
    if sector.contains(angle) {
        1.0
    } else {
        0.0
    }
}

/// `γ = sqrt(N_T·N_R / L)`.
pub fn normalization(n_t: usize, n_r: usize, paths: usize) -> f64 {
    ((n_t * n_r) as f64 / paths as f64).sqrt()
}

pub fn synthesize_channel(tx: &ArrayGeometry, rx: &ArrayGeometry, paths: &PathSet) -> Result<CMatrix> {
    for (side, g) in [("transmit", tx), ("receive", rx)] {
        if g.is_empty() || g.positions.len() != g.n_x * g.n_y {
            return Err(Error::invalid(format!(
                "{side} geometry has {} positions for a {}x{} grid",
                g.positions.len(),
                g.n_x,
                g.n_y
            )));
        }
    }
    let gamma = normalization(tx.len(), rx.len(), paths.len());
    let mut h = CMatrix::zeros(rx.len(), tx.len());
    for p in paths.paths() {
        let scale = p.gain * (gamma * p.rx_gain * p.tx_gain);
        if scale == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a_r = steering_vector(rx, p.rx_angle) * scale;
        let a_t = steering_vector(tx, p.tx_angle);
        h += &a_r * a_t.adjoint();
    }
    Ok(h)
}

/// Multi-user channel draw: one matrix and path set per user.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub channels: Vec<CMatrix>,
    pub paths: Vec<PathSet>,
    pub gamma: f64,
}

impl ChannelRealization {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        tx: &ArrayGeometry,
        rx: &ArrayGeometry,
        users: usize,
        path_count: usize,
        sector: &Sector,
    ) -> Result<Self> {
        if users == 0 {
            return Err(Error::invalid("need at least one user"));
        }
        let mut channels = Vec::with_capacity(users);
        let mut paths = Vec::with_capacity(users);
        for _ in 0..users {
            let ps = PathSet::sample(rng, sector, path_count)?;
            channels.push(synthesize_channel(tx, rx, &ps)?);
            paths.push(ps);
        }
        Ok(ChannelRealization {
            channels,
            paths,
            gamma: normalization(tx.len(), rx.len(), path_count),
        })
    }

    pub fn users(&self) -> usize {
        self.channels.len()
    }
}

/// Noise variance for a corruption level: `mean|H_ij|² · 10^(-snr/20)`.
pub fn corruption_variance(h: &CMatrix, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY || h.is_empty() {
        return 0.0;
    }
    let mean_power = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.len() as f64;
    mean_power * 10f64.powf(-snr_db / 20.0)
}

/// Adds i.i.d. circular Gaussian noise at the given corruption SNR.
/// `snr_db = +∞` returns the input untouched.
pub fn corrupt_channel<R: Rng + ?Sized>(h: &CMatrix, snr_db: f64, rng: &mut R) -> CMatrix {
    let var = corruption_variance(h, snr_db);
    if var == 0.0 {
        return h.clone();
    }
    // column-major traversal fixes the draw order
    h.map(|z| z + complex_gaussian(rng, var))
}
