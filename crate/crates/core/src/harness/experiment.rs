use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::binio::sidecar_path;
use crate::config::KeyValues;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::scenario::{SystemConfig, DEFAULT_SNR_DB};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Algorithm1,
    CnnMimo,
    Mlp,
    NoInterference,
    /// One uniformly chosen candidate per user and side, zero-forced on the
    /// channel estimates.
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Algorithm1,
        Method::CnnMimo,
        Method::Mlp,
        Method::NoInterference,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Algorithm1 => "algorithm1",
            Method::CnnMimo => "cnn_mimo",
            Method::Mlp => "mlp",
            Method::NoInterference => "no_interference",
            Method::Random => "random",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::CnnMimo | Method::Mlp)
    }

    /// Comma-separated method names.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::config("method list is empty"));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::config(format!("unknown method {s:?} (expected one of {})", names.join(", ")))
        })
    }
}

/// The quantity varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Link SNR `10·log10(P/σ²)` in dB.
    Snr,
    /// Corruption SNR of the channel estimates in dB.
    SnrTest,
    Bits,
    Users,
    BsAntennas,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::SnrTest => "snr_test",
            SweepAxis::Bits => "bits",
            SweepAxis::Users => "users",
            SweepAxis::BsAntennas => "bs_antennas",
        }
    }

    fn is_integral(self) -> bool {
        matches!(self, SweepAxis::Bits | SweepAxis::Users | SweepAxis::BsAntennas)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::Snr,
            SweepAxis::SnrTest,
            SweepAxis::Bits,
            SweepAxis::Users,
            SweepAxis::BsAntennas,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::config(format!("unknown sweep axis {s:?}")))
    }
}

/// Where test channels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TestSource {
    /// Independent draws from the system model.
    Fresh,
    /// Scenarios of the training dataset (its configuration and seed),
    /// observed through new corruption noise.
    Dataset(DatasetConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub snr_db: f64,
    /// `+∞` feeds the methods the true channels.
    pub snr_test_db: f64,
    pub methods: Vec<Method>,
    pub source: TestSource,
    pub cnn_model: Option<PathBuf>,
    pub mlp_model: Option<PathBuf>,
    /// Record wall time per decision. Off by default so that output files
    /// are byte-reproducible.
    pub timing: bool,
    /// Reuse each trial's channels and noise draws at every sweep value.
    pub common_random_numbers: bool,
    /// Score analog decisions with a zero-forcing stage built on the true
    /// effective channel; otherwise keep the one computed from the estimates.
    pub true_baseband: bool,
    pub seed: u64,
}

/// Resolved settings for one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoint {
    pub value: f64,
    pub system: SystemConfig,
    pub snr_db: f64,
    pub snr_test_db: f64,
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

impl ExperimentConfig {
    /// Reads `sweep.*` and `system.*` keys plus `seed`. Relative paths are
    /// taken relative to `base`.
    pub fn from_kv(kv: &KeyValues, base: Option<&Path>) -> Result<Self> {
        let source = match kv.get("sweep.source").unwrap_or("fresh") {
            "fresh" => TestSource::Fresh,
            "dataset" => {
                let path = kv
                    .get("sweep.dataset")
                    .ok_or_else(|| Error::config("sweep.source = dataset needs sweep.dataset"))?;
                let meta = sidecar_path(&resolve(base, path));
                if !meta.exists() {
                    return Err(Error::config(format!("dataset metadata {} not found", meta.display())));
                }
                TestSource::Dataset(DatasetConfig::from_kv(&KeyValues::load(&meta)?)?)
            }
            other => {
                return Err(Error::config(format!(
                    "sweep.source must be fresh or dataset, got {other:?}"
                )))
            }
        };
        let system = match &source {
            TestSource::Dataset(d) => d.system.clone(),
            TestSource::Fresh => SystemConfig::from_kv(kv)?,
        };
        let snr_test_db = match kv.get("sweep.snr_test_db") {
            None | Some("inf") | Some("none") => f64::INFINITY,
            Some(_) => kv.parsed::<f64>("sweep.snr_test_db")?.unwrap(),
        };
        let cfg = ExperimentConfig {
            system,
            axis: kv.parsed_or("sweep.axis", SweepAxis::Snr)?,
            values: kv.list("sweep.values")?.unwrap_or_else(|| vec![DEFAULT_SNR_DB]),
            trials: kv.parsed_or("sweep.trials", 100)?,
            snr_db: kv.parsed_or("sweep.snr_db", DEFAULT_SNR_DB)?,
            snr_test_db,
            methods: match kv.get("sweep.methods") {
                Some(s) => Method::parse_list(s)?,
                None => vec![Method::Algorithm1, Method::NoInterference],
            },
            source,
            cnn_model: kv.get("sweep.cnn_model").map(|p| resolve(base, p)),
            mlp_model: kv.get("sweep.mlp_model").map(|p| resolve(base, p)),
            timing: kv.parsed_or("sweep.timing", false)?,
            common_random_numbers: kv.parsed_or("sweep.common_random_numbers", true)?,
            true_baseband: match kv.get("sweep.baseband").unwrap_or("true") {
                "true" => true,
                "estimate" => false,
                other => {
                    return Err(Error::config(format!(
                        "sweep.baseband must be true or estimate, got {other:?}"
                    )))
                }
            },
            seed: kv.parsed_or("seed", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values must list at least one value"));
        }
        if self.trials == 0 {
            return Err(Error::config("sweep.trials must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods requested"));
        }
        if !self.snr_db.is_finite() || self.snr_test_db.is_nan() {
            return Err(Error::config("SNR settings must be numbers"));
        }
        if self.axis.is_integral() && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(Error::config(format!(
                "{} values must be positive integers",
                self.axis.name()
            )));
        }
        if matches!(self.source, TestSource::Dataset(_))
            && matches!(self.axis, SweepAxis::Users | SweepAxis::BsAntennas)
        {
            return Err(Error::config(format!(
                "a {} sweep changes the system dimensions and cannot reuse dataset scenarios",
                self.axis.name()
            )));
        }
        for v in &self.values {
            self.point(*v)?;
        }
        Ok(())
    }

    pub fn point(&self, value: f64) -> Result<TrialPoint> {
        let mut p = TrialPoint {
            value,
            system: self.system.clone(),
            snr_db: self.snr_db,
            snr_test_db: self.snr_test_db,
        };
        match self.axis {
            SweepAxis::Snr => p.snr_db = value,
            SweepAxis::SnrTest => p.snr_test_db = value,
            SweepAxis::Bits => p.system.bits = value as u32,
            SweepAxis::Users => p.system.users = value as usize,
            SweepAxis::BsAntennas => p.system.n_t = value as usize,
        }
        if !p.snr_db.is_finite() {
            return Err(Error::config(format!("link SNR must be finite, got {}", p.snr_db)));
        }
        p.system.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_methods_and_axis() {
        assert_eq!(
            Method::parse_list("cnn_mimo, algorithm1,cnn_mimo").unwrap(),
            vec![Method::CnnMimo, Method::Algorithm1]
        );
        assert!(Method::parse_list("cnn").is_err());
        assert!(Method::parse_list(" , ").is_err());
        assert_eq!("bs_antennas".parse::<SweepAxis>().unwrap(), SweepAxis::BsAntennas);
    }

    #[test]
    fn experiment_from_kv() {
        let kv = KeyValues::parse(
            "system.n_t = 16\nsystem.n_r = 4\nsystem.users = 2\nsweep.axis = users\nsweep.values = 1,2\n\
             sweep.trials = 3\nsweep.methods = algorithm1\nseed = 4\nsweep.cnn_model = m.cmmw\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_kv(&kv, Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(cfg.point(1.0).unwrap().system.users, 1);
        assert_eq!(cfg.snr_test_db, f64::INFINITY);
        assert_eq!(cfg.cnn_model.as_deref(), Some(Path::new("/tmp/x/m.cmmw")));

        let bad = KeyValues::parse("sweep.axis = bits\nsweep.values = 2.5").unwrap();
        assert!(matches!(ExperimentConfig::from_kv(&bad, None), Err(Error::Config(_))));
        let bad = KeyValues::parse("sweep.trials = 0").unwrap();
        assert!(ExperimentConfig::from_kv(&bad, None).is_err());
        let bad = KeyValues::parse("sweep.source = dataset\nsweep.dataset = /nonexistent/d.cmm").unwrap();
        assert!(matches!(ExperimentConfig::from_kv(&bad, None), Err(Error::Config(_))));
    }
}
