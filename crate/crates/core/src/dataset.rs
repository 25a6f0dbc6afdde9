//! Training data: channel/label encodings, generation from exhaustive-search
//! labels, splitting, and the `CMM1` file format.
//!
//! File layout (little-endian): magic `CMM1`, u32 `[version, N_R, N_T, K, T]`,
//! then `T` records of f32 — the input planes `|H|`, `Re H`, `Im H` (each
//! row-major) followed by the label — and finally a u64 FNV-1a of the record
//! bytes. The generating configuration goes to `<path>.meta`.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::beamformer::{exhaustive_search, LinkBudget, SearchOptions};
use crate::binio::{fnv1a, put_u32, put_u64, sidecar_path, to_u32, Reader};
use crate::config::{join, KeyValues};
use crate::error::{Error, Result};
use crate::geometry::{corrupt_channel, CMatrix};
use crate::nn::Examples;
use crate::rng::stream;
use crate::scenario::{generate_scenario, SystemConfig, CORRUPTION, DEFAULT_SNR_DB};

const MAGIC: &[u8; 4] = b"CMM1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

/// `[|H|, Re H, Im H]`, each plane row-major, as one flat vector of length
/// `3·N_R·N_T`.
pub fn encode_input(h: &CMatrix) -> Vec<f64> {
    let (r, c) = h.shape();
    let mut out = vec![0.0; 3 * r * c];
    for i in 0..r {
        for j in 0..c {
            let z = h[(i, j)];
            let at = i * c + j;
            out[at] = z.norm();
            out[r * c + at] = z.re;
            out[2 * r * c + at] = z.im;
        }
    }
    out
}

fn wrapped_phase(z: Complex64) -> f64 {
    let a = z.arg().rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Phases of `vec(F_RF)` then `vec(W_RF)` (column-major), in `[0, 2π)`.
pub fn encode_label(f_rf: &CMatrix, w_rf: &CMatrix) -> Result<Vec<f64>> {
    if f_rf.ncols() != w_rf.ncols() {
        return Err(Error::invalid("precoder and combiner disagree on the user count"));
    }
    let mut z = Vec::with_capacity(f_rf.len() + w_rf.len());
    // nalgebra storage is column-major
    for &e in f_rf.iter().chain(w_rf.iter()) {
        if e == Complex64::new(0.0, 0.0) {
            return Err(Error::invalid("cannot take the phase of a zero entry"));
        }
        z.push(wrapped_phase(e));
    }
    Ok(z)
}

/// Rebuilds `(F_RF, W_RF)` from a label with entry moduli `1/√N_T` and `1/√N_R`.
pub fn decode_label(z: &[f64], n_t: usize, n_r: usize, users: usize) -> Result<(CMatrix, CMatrix)> {
    if z.len() != users * (n_t + n_r) {
        return Err(Error::invalid(format!(
            "label has {} entries, expected {}",
            z.len(),
            users * (n_t + n_r)
        )));
    }
    let (f, w) = z.split_at(users * n_t);
    let build = |phases: &[f64], n: usize| {
        let m = 1.0 / (n as f64).sqrt();
        CMatrix::from_iterator(n, users, phases.iter().map(|&p| Complex64::from_polar(m, p)))
    };
    Ok((build(f, n_t), build(w, n_r)))
}

/// Which channels the labelling search sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// One search per scenario on the true channels, shared by all corruptions.
    Clean,
    /// One search per corrupted copy.
    Corrupted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub system: SystemConfig,
    pub scenarios: usize,
    pub corruptions: usize,
    pub snr_train_db: Vec<f64>,
    pub labels: LabelSource,
    /// Link SNR used by the labelling search.
    pub label_snr_db: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    /// 500 scenarios × 100 corruptions at 15, 20 and 25 dB.
    fn default() -> Self {
        DatasetConfig {
            system: SystemConfig::default(),
            scenarios: 500,
            corruptions: 100,
            snr_train_db: vec![15.0, 20.0, 25.0],
            labels: LabelSource::Clean,
            label_snr_db: DEFAULT_SNR_DB,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = DatasetConfig::default();
        let labels = match kv.get("dataset.labels") {
            None | Some("clean") => LabelSource::Clean,
            Some("corrupted") => LabelSource::Corrupted,
            Some(other) => {
                return Err(Error::config(format!(
                    "dataset.labels must be clean or corrupted, got {other:?}"
                )))
            }
        };
        let cfg = DatasetConfig {
            system: SystemConfig::from_kv(kv)?,
            scenarios: kv.parsed_or("dataset.scenarios", d.scenarios)?,
            corruptions: kv.parsed_or("dataset.corruptions", d.corruptions)?,
            snr_train_db: kv.list("dataset.snr_train_db")?.unwrap_or(d.snr_train_db),
            labels,
            label_snr_db: kv.parsed_or("dataset.label_snr_db", d.label_snr_db)?,
            seed: kv.parsed_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.system.write_kv(&mut kv);
        kv.set("dataset.scenarios", self.scenarios);
        kv.set("dataset.corruptions", self.corruptions);
        kv.set("dataset.snr_train_db", join(&self.snr_train_db));
        kv.set(
            "dataset.labels",
            match self.labels {
                LabelSource::Clean => "clean",
                LabelSource::Corrupted => "corrupted",
            },
        );
        kv.set("dataset.label_snr_db", self.label_snr_db);
        kv.set("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.scenarios == 0 || self.corruptions == 0 {
            return Err(Error::config(
                "dataset.scenarios and dataset.corruptions must be at least 1",
            ));
        }
        if self.snr_train_db.is_empty() {
            return Err(Error::config("dataset.snr_train_db needs at least one level"));
        }
        if self.snr_train_db.iter().any(|s| s.is_nan()) || !self.label_snr_db.is_finite() {
            return Err(Error::config("SNR values must be numbers"));
        }
        Ok(())
    }

    /// `N · G · K · levels`.
    pub fn sample_count(&self) -> usize {
        self.scenarios * self.corruptions * self.system.users * self.snr_train_db.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `[3, N_R, N_T]`, see [`encode_input`].
    pub x: Vec<f32>,
    /// Label phases, see [`encode_label`].
    pub z: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub n_r: usize,
    pub n_t: usize,
    pub users: usize,
}

impl Dimensions {
    pub fn input_len(&self) -> usize {
        3 * self.n_r * self.n_t
    }

    pub fn label_len(&self) -> usize {
        self.users * (self.n_t + self.n_r)
    }

    fn record_len(&self) -> usize {
        4 * (self.input_len() + self.label_len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dimensions,
    /// Generating configuration, when known.
    pub config: Option<DatasetConfig>,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn empty(dims: Dimensions) -> Self {
        Dataset {
            dims,
            config: None,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Widens the samples to `f64` for training.
    pub fn to_examples(&self) -> Result<Examples> {
        let d = self.dims;
        let inputs = self
            .samples
            .iter()
            .flat_map(|s| s.x.iter().map(|&v| v as f64))
            .collect();
        let targets = self
            .samples
            .iter()
            .flat_map(|s| s.z.iter().map(|&v| v as f64))
            .collect();
        Examples::new([3, d.n_r, d.n_t], d.label_len(), inputs, targets)
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            dims: self.dims,
            config: self.config.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn scenario_samples(cfg: &DatasetConfig, n: usize) -> Result<Vec<TrainingSample>> {
    let sys = &cfg.system;
    let scenario = generate_scenario(sys, cfg.seed, n as u64)?;
    let channels = &scenario.realization.channels;
    let budget = LinkBudget::from_snr_db(cfg.label_snr_db)?;
    let label_for = |hs: &[CMatrix]| -> Result<Vec<f32>> {
        let res = exhaustive_search(hs, &scenario.candidates, &budget, SearchOptions::default())?;
        Ok(to_f32(&encode_label(&res.best.f_rf, &res.best.w_rf)?))
    };
    let clean_label = match cfg.labels {
        LabelSource::Clean => Some(label_for(channels)?),
        LabelSource::Corrupted => None,
    };

    let mut rng = stream(cfg.seed, &[CORRUPTION, n as u64]);
    let levels = cfg.snr_train_db.len();
    let mut out = Vec::with_capacity(cfg.corruptions * levels * sys.users);
    for g in 0..cfg.corruptions * levels {
        let snr = cfg.snr_train_db[g % levels];
        let noisy: Vec<CMatrix> = channels.iter().map(|h| corrupt_channel(h, snr, &mut rng)).collect();
        let z = match &clean_label {
            Some(z) => z.clone(),
            None => label_for(&noisy)?,
        };
        for h in &noisy {
            out.push(TrainingSample {
                x: to_f32(&encode_input(h)),
                z: z.clone(),
            });
        }
    }
    Ok(out)
}

/// Runs the search-and-corrupt generator. Scenarios run in parallel on the
/// current rayon pool; the output is ordered by (scenario, corruption, user)
/// and does not depend on the pool size.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let per: Vec<Vec<TrainingSample>> = (0..cfg.scenarios)
        .into_par_iter()
        .map(|n| scenario_samples(cfg, n))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        dims: Dimensions {
            n_r: cfg.system.n_r,
            n_t: cfg.system.n_t,
            users: cfg.system.users,
        },
        config: Some(cfg.clone()),
        samples: per.into_iter().flatten().collect(),
    })
}

/// Shuffled split into `⌊fraction·T⌋` training and the remaining
/// validation samples.
pub fn split_dataset<R: Rng + ?Sized>(d: &Dataset, train_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(rng);
    let cut = (train_fraction * d.len() as f64).floor() as usize;
    Ok((d.subset(&idx[..cut]), d.subset(&idx[cut..])))
}

/// Exact file size for a dataset of `samples` records.
pub fn dataset_file_size(dims: Dimensions, samples: usize) -> usize {
    HEADER_LEN + samples * dims.record_len() + 8
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let dims = d.dims;
    let mut out = Vec::with_capacity(dataset_file_size(dims, d.len()));
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(dims.n_r, "N_R")?);
    put_u32(&mut out, to_u32(dims.n_t, "N_T")?);
    put_u32(&mut out, to_u32(dims.users, "K")?);
    put_u32(&mut out, to_u32(d.len(), "sample count")?);
    for (i, s) in d.samples.iter().enumerate() {
        if s.x.len() != dims.input_len() || s.z.len() != dims.label_len() {
            return Err(Error::invalid(format!(
                "sample {i} does not match the dataset dimensions"
            )));
        }
        for v in s.x.iter().chain(&s.z) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&out[HEADER_LEN..]);
    put_u64(&mut out, sum);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a CMM1 dataset"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported dataset version {version}")));
    }
    let dims = Dimensions {
        n_r: r.u32("N_R")? as usize,
        n_t: r.u32("N_T")? as usize,
        users: r.u32("K")? as usize,
    };
    let count = r.u32("sample count")? as usize;
    let expected = dataset_file_size(dims, count);
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated: {count} samples need {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let payload = r.take(count * dims.record_len(), "records")?;
    let stored = r.u64("checksum")?;
    if stored != fnv1a(payload) {
        return Err(Error::format(
            (HEADER_LEN + payload.len()) as u64,
            "checksum mismatch in sample records",
        ));
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.pos() as u64,
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    let floats = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let split = 4 * dims.input_len();
    let samples = if dims.record_len() == 0 {
        vec![TrainingSample { x: vec![], z: vec![] }; count]
    } else {
        payload
            .chunks_exact(dims.record_len())
            .map(|rec| TrainingSample {
                x: floats(&rec[..split]),
                z: floats(&rec[split..]),
            })
            .collect()
    };
    Ok(Dataset {
        dims,
        config: None,
        samples,
    })
}

/// Writes the binary file and, when the configuration is known, its sidecar.
pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(d)?)?;
    if let Some(cfg) = &d.config {
        std::fs::write(sidecar_path(path), cfg.to_kv().to_text())?;
    }
    Ok(())
}

/// Reads a dataset and, if present, the configuration sidecar next to it.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut d = decode_dataset(&std::fs::read(path)?)?;
    let meta = sidecar_path(path);
    if meta.exists() {
        let cfg = DatasetConfig::from_kv(&KeyValues::load(&meta)?)?;
        if (cfg.system.n_r, cfg.system.n_t, cfg.system.users) != (d.dims.n_r, d.dims.n_t, d.dims.users) {
            return Err(Error::config(format!(
                "{} disagrees with the dataset header dimensions",
                meta.display()
            )));
        }
        d.config = Some(cfg);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::PhaseGrid;
    use crate::geometry::complex_gaussian;
    use crate::rng::seeded;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn tiny_config() -> DatasetConfig {
        DatasetConfig {
            system: SystemConfig {
                n_t: 4,
                n_r: 2,
                users: 2,
                paths: 3,
                bits: 2,
                ..SystemConfig::default()
            },
            scenarios: 3,
            corruptions: 2,
            snr_train_db: vec![15.0, 25.0],
            labels: LabelSource::Clean,
            label_snr_db: 10.0,
            seed: 5,
        }
    }

    #[test]
    fn input_pythagorean_entry() {
        let h = CMatrix::from_row_slice(1, 2, &[c(3.0, 4.0), c(0.0, 0.0)]);
        assert_eq!(encode_input(&h), vec![5.0, 0.0, 3.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn input_magnitude_plane_matches_parts() {
        let mut rng = seeded(2);
        let h = CMatrix::from_fn(3, 5, |_, _| complex_gaussian(&mut rng, 1.0));
        let x = encode_input(&h);
        for i in 0..15 {
            assert!(x[i] >= 0.0);
            assert!((x[i] * x[i] - x[15 + i].powi(2) - x[30 + i].powi(2)).abs() < 1e-12);
        }
        // row-major: element (1, 2) sits at 1*5 + 2
        assert_eq!(x[15 + 7], h[(1, 2)].re);
    }

    #[test]
    fn label_examples() {
        let ones = CMatrix::from_element(3, 2, c(1.0, 0.0));
        let w = CMatrix::from_element(2, 2, c(1.0, 0.0));
        assert!(encode_label(&ones, &w).unwrap().iter().all(|&v| v == 0.0));
        let mut f = ones.clone();
        f[(0, 0)] = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_3);
        let z = encode_label(&f, &w).unwrap();
        assert!((z[0] - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
        f[(1, 1)] = c(0.0, 0.0);
        assert!(encode_label(&f, &w).is_err());
        // phase just below zero wraps into the top of the range
        f[(1, 1)] = Complex64::from_polar(1.0, -0.5);
        assert!((encode_label(&f, &w).unwrap()[4] - (TAU - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn label_round_trip() {
        let mut rng = seeded(9);
        let z: Vec<f64> = (0..2 * (4 + 2)).map(|_| rng.gen_range(0.0..TAU)).collect();
        let (f, w) = decode_label(&z, 4, 2, 2).unwrap();
        assert!(f.iter().all(|e| (e.norm() - 0.5).abs() < 1e-15));
        let again = encode_label(&f, &w).unwrap();
        for (a, b) in z.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
        let (f2, w2) = decode_label(&again, 4, 2, 2).unwrap();
        let third = encode_label(&f2, &w2).unwrap();
        assert!(third.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn generation_counts_order_and_labels() {
        let cfg = tiny_config();
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(d.len(), cfg.sample_count());
        assert_eq!(d.len(), 3 * 2 * 2 * 2);
        let grid = PhaseGrid::new(cfg.system.bits).unwrap();
        for s in &d.samples {
            assert!(s.z.iter().all(|&p| (0.0..TAU as f32).contains(&p)));
            assert!(s.z.iter().all(|&p| grid.contains(p as f64, 1e-5)));
        }
        // K consecutive samples share a label; with clean labels the whole
        // scenario does
        let per_scenario = 2 * 2 * 2;
        for block in d.samples.chunks(per_scenario) {
            assert!(block.iter().all(|s| s.z == block[0].z));
        }
        assert_eq!(generate_dataset(&cfg).unwrap(), d);
    }

    #[test]
    fn corrupted_labels_share_within_group() {
        let cfg = DatasetConfig {
            labels: LabelSource::Corrupted,
            ..tiny_config()
        };
        let d = generate_dataset(&cfg).unwrap();
        for group in d.samples.chunks(cfg.system.users) {
            assert!(group.iter().all(|s| s.z == group[0].z));
        }
        // inputs are the same corrupted channels as in clean mode
        let clean = generate_dataset(&tiny_config()).unwrap();
        assert!(d.samples.iter().zip(&clean.samples).all(|(a, b)| a.x == b.x));
    }

    #[test]
    fn generation_independent_of_thread_count() {
        let cfg = tiny_config();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| generate_dataset(&cfg)).unwrap();
        let b = four.install(|| generate_dataset(&cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_sizes_and_partition() {
        let cfg = DatasetConfig {
            scenarios: 5,
            corruptions: 1,
            snr_train_db: vec![20.0],
            ..tiny_config()
        };
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 10);
        let (a, b) = split_dataset(&d, 0.8, &mut seeded(1)).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split_dataset(&d, 0.8, &mut seeded(1)).unwrap();
        assert_eq!((a2, b2), (a.clone(), b.clone()));
        // samples are distinct (continuous noise), so membership identifies indices
        let mut seen: Vec<&TrainingSample> = a.samples.iter().chain(&b.samples).collect();
        seen.dedup();
        assert_eq!(seen.len(), 10);
        assert!(d.samples.iter().all(|s| seen.contains(&s)));
        assert!(split_dataset(&d, 1.0, &mut seeded(1)).is_err());
    }

    #[test]
    fn file_round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cmm");
        let d = generate_dataset(&tiny_config()).unwrap();
        write_dataset(&d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), dataset_file_size(d.dims, d.len()));
        assert_eq!(bytes.len(), 24 + 24 * 4 * (3 * 2 * 4 + 2 * 6) + 8);
        assert_eq!(read_dataset(&path).unwrap(), d);

        let empty = Dataset::empty(d.dims);
        let e = dir.path().join("e.cmm");
        write_dataset(&empty, &e).unwrap();
        assert_eq!(read_dataset(&e).unwrap(), empty);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let d = generate_dataset(&tiny_config()).unwrap();
        let bytes = encode_dataset(&d).unwrap();
        let offset = |b: &[u8]| match decode_dataset(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected a format error, got {other:?}"),
        };
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(offset(&bad), 4);
        assert_eq!(offset(&bytes[..bytes.len() - 100]), (bytes.len() - 100) as u64);
        let mut bad = bytes.clone();
        bad[HEADER_LEN + 37] ^= 0x10;
        assert_eq!(offset(&bad), (bytes.len() - 8) as u64);
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = tiny_config();
        let back = DatasetConfig::from_kv(&KeyValues::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(DatasetConfig::default().sample_count(), 450_000);
    }
}
