//! System dimensions and per-scenario channel/candidate draws shared by
//! dataset generation and the experiment harness.

use crate::codebook::{build_user_candidates, DirectionGrid, PhaseGrid, UserCandidates};
use crate::config::{join, KeyValues};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, ChannelRealization, Sector};
use crate::rng::stream;

/// Link SNR (10·log10 P/σ²) used when nothing else is configured.
pub const DEFAULT_SNR_DB: f64 = 0.0;

/// Stream tags under the master seed. Scenario `n` draws from `[SCENARIO, n]`.
pub(crate) const SCENARIO: u64 = 0;
pub(crate) const CORRUPTION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub users: usize,
    pub paths: usize,
    pub bits: u32,
    /// Sector bounds in degrees, `(min, max)`.
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    /// Snap path angles to an `n_az × n_el` grid before quantizing.
    pub direction_grid: Option<(usize, usize)>,
    /// Candidates kept per user and side; 0 keeps one per path.
    pub candidates: usize,
}

impl Default for SystemConfig {
    /// 36 BS antennas, 9 per user, 3 users, 10 paths, 3-bit phase shifters.
    fn default() -> Self {
        SystemConfig {
            n_t: 36,
            n_r: 9,
            users: 3,
            paths: 10,
            bits: 3,
            azimuth_deg: (-30.0, 30.0),
            elevation_deg: (-20.0, 20.0),
            direction_grid: None,
            candidates: 0,
        }
    }
}

fn pair(v: Vec<f64>, key: &str) -> Result<(f64, f64)> {
    match v[..] {
        [a] => Ok((-a.abs(), a.abs())),
        [lo, hi] if lo <= hi => Ok((lo, hi)),
        _ => Err(Error::config(format!("{key}: expected `half_width` or `min,max`"))),
    }
}

impl SystemConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SystemConfig::default();
        let direction_grid = match kv.get("system.direction_grid") {
            None | Some("none") | Some("") => None,
            Some(s) => {
                let (a, e) = s
                    .split_once('x')
                    .ok_or_else(|| Error::config(format!("system.direction_grid: expected AxE or none, got {s:?}")))?;
                let parse = |t: &str| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::config(format!("system.direction_grid: {e}")))
                };
                Some((parse(a)?, parse(e)?))
            }
        };
        let cfg = SystemConfig {
            n_t: kv.parsed_or("system.n_t", d.n_t)?,
            n_r: kv.parsed_or("system.n_r", d.n_r)?,
            users: kv.parsed_or("system.users", d.users)?,
            paths: kv.parsed_or("system.paths", d.paths)?,
            bits: kv.parsed_or("system.bits", d.bits)?,
            azimuth_deg: match kv.list("system.azimuth_deg")? {
                Some(v) => pair(v, "system.azimuth_deg")?,
                None => d.azimuth_deg,
            },
            elevation_deg: match kv.list("system.elevation_deg")? {
                Some(v) => pair(v, "system.elevation_deg")?,
                None => d.elevation_deg,
            },
            direction_grid,
            candidates: kv.parsed_or("system.candidates", d.candidates)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("system.n_t", self.n_t);
        kv.set("system.n_r", self.n_r);
        kv.set("system.users", self.users);
        kv.set("system.paths", self.paths);
        kv.set("system.bits", self.bits);
        kv.set("system.azimuth_deg", join(&[self.azimuth_deg.0, self.azimuth_deg.1]));
        kv.set(
            "system.elevation_deg",
            join(&[self.elevation_deg.0, self.elevation_deg.1]),
        );
        kv.set(
            "system.direction_grid",
            self.direction_grid
                .map_or("none".to_string(), |(a, e)| format!("{a}x{e}")),
        );
        kv.set("system.candidates", self.candidates);
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("system.n_t", self.n_t),
            ("system.n_r", self.n_r),
            ("system.users", self.users),
            ("system.paths", self.paths),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{k} must be at least 1")));
            }
        }
        if !(1..=24).contains(&self.bits) {
            return Err(Error::config(format!(
                "system.bits must be in 1..=24, got {}",
                self.bits
            )));
        }
        if self.users > self.n_t {
            return Err(Error::config(format!(
                "{} users cannot be served by {} BS antennas",
                self.users, self.n_t
            )));
        }
        if let Some((a, e)) = self.direction_grid {
            if a == 0 || e == 0 {
                return Err(Error::config("system.direction_grid dimensions must be positive"));
            }
        }
        Ok(())
    }

    pub fn sector(&self) -> Sector {
        Sector::from_degrees(self.azimuth_deg, self.elevation_deg)
    }

    pub fn phase_grid(&self) -> Result<PhaseGrid> {
        PhaseGrid::new(self.bits)
    }

    pub fn arrays(&self) -> Result<(ArrayGeometry, ArrayGeometry)> {
        Ok((
            ArrayGeometry::with_elements(self.n_t)?,
            ArrayGeometry::with_elements(self.n_r)?,
        ))
    }

    /// Candidates per user and side after truncation.
    pub fn candidate_count(&self) -> usize {
        if self.candidates == 0 {
            self.paths
        } else {
            self.candidates.min(self.paths)
        }
    }
}

/// One channel draw with its per-user candidate sets.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub realization: ChannelRealization,
    pub candidates: Vec<UserCandidates>,
}

/// Draws channels and candidate sets from the stream `(seed, index)`.
pub fn generate_scenario(cfg: &SystemConfig, seed: u64, index: u64) -> Result<Scenario> {
    let mut rng = stream(seed, &[SCENARIO, index]);
    draw_scenario(cfg, &mut rng)
}

pub fn draw_scenario<R: rand::Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Scenario> {
    cfg.validate()?;
    let (tx, rx) = cfg.arrays()?;
    let sector = cfg.sector();
    let grid = cfg.phase_grid()?;
    let snap = cfg
        .direction_grid
        .map(|(a, e)| DirectionGrid::new(a, e, &sector))
        .transpose()?;
    let realization = ChannelRealization::sample(rng, &tx, &rx, cfg.users, cfg.paths, &sector)?;
    let candidates = realization
        .paths
        .iter()
        .map(|p| build_user_candidates(&tx, &rx, p, &grid, snap.as_ref())?.truncated(cfg.candidate_count()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        realization,
        candidates,
    })
}
