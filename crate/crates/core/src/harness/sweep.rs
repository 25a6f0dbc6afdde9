use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::experiment::{ExperimentConfig, Method, TestSource, TrialPoint};
use super::pipeline::ModelConfig;
use super::report::ResultRow;
use super::tags;
use crate::beamformer::{
    beamformer_from_selection, design_baseband, exhaustive_search, no_interference_bound, system_sum_rate,
    HybridBeamformer, LinkBudget, SearchOptions,
};
use crate::codebook::{PhaseGrid, Side, UserCandidates};
use crate::dataset::Dimensions;
use crate::error::{Error, Result};
use crate::geometry::{corrupt_channel, CMatrix};
use crate::nn::{fuse_user_predictions, predict_beamformers, read_checkpoint, Network};
use crate::rng::stream;
use crate::scenario::{draw_scenario, generate_scenario};

/// Trained networks for the learned methods.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub cnn: Option<Network>,
    pub mlp: Option<Network>,
}

impl Models {
    fn get_mut(&mut self, m: Method) -> Option<&mut Network> {
        match m {
            Method::CnnMimo => self.cnn.as_mut(),
            Method::Mlp => self.mlp.as_mut(),
            _ => None,
        }
    }
}

/// Loads a checkpoint for every learned method in `cfg.methods`.
pub fn load_models(cfg: &ExperimentConfig) -> Result<Models> {
    let mut models = Models::default();
    for &m in &cfg.methods {
        let (path, key) = match m {
            Method::CnnMimo => (&cfg.cnn_model, "sweep.cnn_model"),
            Method::Mlp => (&cfg.mlp_model, "sweep.mlp_model"),
            _ => continue,
        };
        let path = path
            .as_ref()
            .ok_or_else(|| Error::config(format!("method {m} needs {key}")))?;
        if !path.is_file() {
            return Err(Error::config(format!("model file {} not found", path.display())));
        }
        let net = read_checkpoint(path)?;
        match m {
            Method::CnnMimo => models.cnn = Some(net),
            _ => models.mlp = Some(net),
        }
    }
    Ok(models)
}

fn dims(point: &TrialPoint) -> Dimensions {
    Dimensions {
        n_r: point.system.n_r,
        n_t: point.system.n_t,
        users: point.system.users,
    }
}

fn fits(model: &Network, d: Dimensions) -> bool {
    model.input_shape() == [3, d.n_r, d.n_t] && model.output_width() == d.users * (d.n_t + d.n_r)
}

fn check_models(cfg: &ExperimentConfig, models: &Models, point: &TrialPoint) -> Result<()> {
    let d = dims(point);
    for &m in cfg.methods.iter().filter(|m| m.is_learned()) {
        let net = match m {
            Method::CnnMimo => models.cnn.as_ref(),
            _ => models.mlp.as_ref(),
        }
        .ok_or_else(|| Error::config(format!("no model loaded for {m}")))?;
        if !fits(net, d) {
            return Err(Error::config(format!(
                "{m} model maps {:?} to {} outputs, but the sweep at {} needs N_R={}, N_T={}, K={}",
                net.input_shape(),
                net.output_width(),
                point.value,
                d.n_r,
                d.n_t,
                d.users
            )));
        }
    }
    Ok(())
}

struct Trial {
    channels: Vec<CMatrix>,
    estimates: Vec<CMatrix>,
    candidates: Vec<UserCandidates>,
    budget: LinkBudget,
    grid: PhaseGrid,
    key: Vec<u64>,
}

fn build_trial(cfg: &ExperimentConfig, point: &TrialPoint, value_index: usize, trial: usize) -> Result<Trial> {
    let key = if cfg.common_random_numbers {
        vec![trial as u64]
    } else {
        vec![value_index as u64, trial as u64]
    };
    let path = |tag: u64| [&[tag][..], &key].concat();
    let mut draw = stream(cfg.seed, &path(tags::TRIAL));
    let scenario = match &cfg.source {
        TestSource::Fresh => draw_scenario(&point.system, &mut draw)?,
        TestSource::Dataset(d) => {
            let n = draw.gen_range(0..d.scenarios) as u64;
            generate_scenario(&point.system, d.seed, n)?
        }
    };
    let mut noise = stream(cfg.seed, &path(tags::NOISE));
    let channels = scenario.realization.channels;
    let estimates = channels
        .iter()
        .map(|h| corrupt_channel(h, point.snr_test_db, &mut noise))
        .collect();
    Ok(Trial {
        channels,
        estimates,
        candidates: scenario.candidates,
        budget: LinkBudget::from_snr_db(point.snr_db)?,
        grid: point.system.phase_grid()?,
        key,
    })
}

enum Decision {
    Beamformer(HybridBeamformer),
    Bound(f64),
}

fn decide(method: Method, trial: &Trial, models: &mut Models, seed: u64) -> Result<Decision> {
    Ok(match method {
        Method::Algorithm1 => {
            let res = exhaustive_search(
                &trial.channels,
                &trial.candidates,
                &trial.budget,
                SearchOptions::default(),
            )?;
            Decision::Beamformer(res.best)
        }
        Method::NoInterference => Decision::Bound(no_interference_bound(&trial.channels, &trial.budget)),
        Method::Random => {
            let mut rng = stream(seed, &[&[tags::RANDOM_BASELINE][..], &trial.key].concat());
            let mut pick = |side: Side| -> Vec<usize> {
                trial
                    .candidates
                    .iter()
                    .map(|c| rng.gen_range(1..=c.count(side)))
                    .collect()
            };
            let tx = pick(Side::Tx);
            let rx = pick(Side::Rx);
            let (bf, _) = beamformer_from_selection(&trial.estimates, &trial.candidates, &tx, &rx, &trial.budget)?;
            Decision::Beamformer(bf)
        }
        Method::CnnMimo | Method::Mlp => {
            let net = models
                .get_mut(method)
                .ok_or_else(|| Error::config(format!("no model loaded for {method}")))?;
            let preds = predict_beamformers(net, &trial.estimates, &trial.grid)?;
            let (bf, _, _) = fuse_user_predictions(&preds, &trial.estimates, &trial.budget)?;
            Decision::Beamformer(bf)
        }
    })
}

/// Sum-rate on the true channels. With `true_baseband` the digital stage is
/// re-derived from the true effective channel, so only the analog decision
/// is being scored.
fn score(decision: &Decision, trial: &Trial, true_baseband: bool) -> Result<f64> {
    match decision {
        Decision::Bound(r) => Ok(*r),
        Decision::Beamformer(bf) => {
            let f_bb = if true_baseband {
                design_baseband(&trial.channels, &bf.f_rf, &bf.w_rf, &trial.budget)?.f_bb
            } else {
                bf.f_bb.clone()
            };
            system_sum_rate(&trial.channels, &bf.f_rf, &f_bb, &bf.w_rf, &trial.budget)
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every method on every trial at every sweep value. Trials run in
/// parallel on the current rayon pool; each derives its own streams, so
/// the rows do not depend on the pool size.
pub fn run_sweep(cfg: &ExperimentConfig, models: &Models) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (vi, &value) in cfg.values.iter().enumerate() {
        let point = cfg.point(value)?;
        check_models(cfg, models, &point)?;
        let per_trial: Vec<Vec<(f64, f64)>> = (0..cfg.trials)
            .into_par_iter()
            .map_init(
                || models.clone(),
                |local, t| {
                    let trial = build_trial(cfg, &point, vi, t)?;
                    cfg.methods
                        .iter()
                        .map(|&m| {
                            let start = Instant::now();
                            let d = decide(m, &trial, local, cfg.seed)?;
                            let ms = if cfg.timing {
                                start.elapsed().as_secs_f64() * 1e3
                            } else {
                                0.0
                            };
                            Ok((score(&d, &trial, cfg.true_baseband)?, ms))
                        })
                        .collect::<Result<Vec<_>>>()
                },
            )
            .collect::<Result<_>>()?;
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let rates: Vec<f64> = per_trial.iter().map(|r| r[mi].0).collect();
            let times: Vec<f64> = per_trial.iter().map(|r| r[mi].1).collect();
            let (mean_rate, std_rate) = mean_std(&rates);
            rows.push(ResultRow {
                sweep: value,
                method,
                mean_rate,
                std_rate,
                trials: cfg.trials,
                time_ms: mean_std(&times).0,
            });
        }
    }
    Ok(rows)
}

/// Median wall time in milliseconds of `repetitions` calls, after three
/// discarded warm-up calls.
pub fn median_latency<F: FnMut() -> Result<()>>(repetitions: usize, mut f: F) -> Result<f64> {
    if repetitions < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 repetitions, got {repetitions}"
        )));
    }
    for _ in 0..3 {
        f()?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// Median time of one single-threaded decision by `method` on the first
/// trial at `point`. Learned methods without a fitting loaded model time an
/// untrained network built from `model_cfg`, since inference cost does not
/// depend on the weights. Returns the median time and the decision's rate.
pub fn measure_latency(
    method: Method,
    cfg: &ExperimentConfig,
    point: &TrialPoint,
    models: &Models,
    model_cfg: &ModelConfig,
    repetitions: usize,
) -> Result<(f64, f64)> {
    let trial = build_trial(cfg, point, 0, 0)?;
    let mut local = models.clone();
    if method.is_learned() {
        let d = dims(point);
        let slot = match method {
            Method::CnnMimo => &mut local.cnn,
            _ => &mut local.mlp,
        };
        if !slot.as_ref().is_some_and(|n| fits(n, d)) {
            let mut mc = model_cfg.clone();
            mc.kind = match method {
                Method::CnnMimo => super::pipeline::ModelKind::Cnn,
                _ => super::pipeline::ModelKind::Mlp,
            };
            *slot = Some(mc.build(d, 0)?);
        }
    }
    let mut last = None;
    let ms = median_latency(repetitions, || {
        last = Some(decide(method, &trial, &mut local, cfg.seed)?);
        Ok(())
    })?;
    let rate = match &last {
        Some(d) => score(d, &trial, cfg.true_baseband)?,
        None => f64::NAN,
    };
    Ok((ms, rate))
}

/// One row per (sweep value, method) with the median decision time.
pub fn run_latency(
    cfg: &ExperimentConfig,
    models: &Models,
    model_cfg: &ModelConfig,
    repetitions: usize,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &value in &cfg.values {
        let point = cfg.point(value)?;
        for &method in &cfg.methods {
            let (ms, rate) = measure_latency(method, cfg, &point, models, model_cfg, repetitions)?;
            rows.push(ResultRow {
                sweep: value,
                method,
                mean_rate: rate,
                std_rate: 0.0,
                trials: repetitions,
                time_ms: ms,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KeyValues;

    fn small_cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            "system.n_t = 8\nsystem.n_r = 2\nsystem.users = 2\nsystem.paths = 3\nsystem.bits = 3\n\
             sweep.trials = 6\nseed = 11\n{extra}"
        );
        ExperimentConfig::from_kv(&KeyValues::parse(&text).unwrap(), None).unwrap()
    }

    #[test]
    fn single_row_for_single_method() {
        let cfg = small_cfg("sweep.values = 10\nsweep.methods = algorithm1\nsweep.trials = 1");
        let rows = run_sweep(&cfg, &Models::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].method, Method::Algorithm1);
        assert_eq!(rows[0].trials, 1);
        assert!(rows[0].mean_rate > 0.0);
    }

    #[test]
    fn bound_dominates_search_and_search_dominates_random() {
        let cfg = small_cfg("sweep.values = 0,10\nsweep.methods = algorithm1,no_interference,random");
        let rows = run_sweep(&cfg, &Models::default()).unwrap();
        for chunk in rows.chunks(3) {
            assert!(chunk[1].mean_rate >= chunk[0].mean_rate);
            assert!(chunk[0].mean_rate >= chunk[2].mean_rate);
        }
    }

    #[test]
    fn independent_of_thread_count() {
        let cfg = small_cfg("sweep.axis = snr_test\nsweep.values = 5,20\nsweep.methods = algorithm1,random");
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_sweep(&cfg, &Models::default())).unwrap();
        let b = three.install(|| run_sweep(&cfg, &Models::default())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn learned_method_without_model_is_config_error() {
        let cfg = small_cfg("sweep.methods = cnn_mimo");
        assert!(matches!(load_models(&cfg), Err(Error::Config(_))));
        let cfg = small_cfg("sweep.methods = cnn_mimo\nsweep.cnn_model = /nonexistent/m.cmmw");
        match load_models(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("/nonexistent/m.cmmw")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_model_is_config_error() {
        let cfg = small_cfg("sweep.methods = cnn_mimo");
        let wrong = Dimensions {
            n_r: 3,
            n_t: 4,
            users: 2,
        };
        let mut mc = ModelConfig::default();
        mc.cnn.filters = 2;
        mc.cnn.fc_units = 4;
        let models = Models {
            cnn: Some(mc.build(wrong, 0).unwrap()),
            mlp: None,
        };
        assert!(matches!(run_sweep(&cfg, &models), Err(Error::Config(_))));
    }

    #[test]
    fn latency_median_is_positive() {
        let ms = median_latency(5, || {
            std::hint::black_box((0..1000).sum::<u64>());
            Ok(())
        })
        .unwrap();
        assert!(ms.is_finite() && ms >= 0.0);
        assert!(median_latency(4, || Ok(())).is_err());
    }
}
