use super::network::Network;
use super::Tensor;
use crate::beamformer::{design_baseband, HybridBeamformer, LinkBudget};
use crate::codebook::PhaseGrid;
use crate::dataset::{decode_label, encode_input};
use crate::error::{Error, Result};
use crate::geometry::CMatrix;

/// Scaled analog precoder (N_T×K) and combiner (N_R×K).
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogPair {
    pub f_rf: CMatrix,
    pub w_rf: CMatrix,
}

fn dims(model: &Network) -> Result<(usize, usize, usize)> {
    let [_, n_r, n_t] = model.input_shape();
    let out = model.output_width();
    if !out.is_multiple_of(n_t + n_r) {
        return Err(Error::invalid(format!(
            "output width {out} is not a multiple of N_T + N_R = {}",
            n_t + n_r
        )));
    }
    Ok((n_t, n_r, out / (n_t + n_r)))
}

/// Turns raw network outputs into analog beamformers, snapping every phase
/// to `grid` when one is given.
pub fn rebuild_beamformers(
    z: &[f64],
    n_t: usize,
    n_r: usize,
    users: usize,
    grid: Option<&PhaseGrid>,
) -> Result<AnalogPair> {
    let phases: Vec<f64> = match grid {
        Some(g) => z.iter().map(|&p| g.quantize(p)).collect(),
        None => z.to_vec(),
    };
    let (f_rf, w_rf) = decode_label(&phases, n_t, n_r, users)?;
    Ok(AnalogPair { f_rf, w_rf })
}

/// Infers one batch `[n, 3, N_R, N_T]` and quantizes each output.
pub fn predict_and_quantize(model: &mut Network, x: &Tensor, grid: &PhaseGrid) -> Result<Vec<AnalogPair>> {
    let (n_t, n_r, k) = dims(model)?;
    let out = model.predict(x)?;
    let width = model.output_width();
    out.data()
        .chunks(width)
        .map(|z| rebuild_beamformers(z, n_t, n_r, k, Some(grid)))
        .collect()
}

/// One prediction per channel (each user's own estimate), in one batch.
pub fn predict_beamformers(model: &mut Network, channels: &[CMatrix], grid: &PhaseGrid) -> Result<Vec<AnalogPair>> {
    let [c, n_r, n_t] = model.input_shape();
    if channels.is_empty() {
        return Ok(Vec::new());
    }
    let mut data = Vec::with_capacity(channels.len() * c * n_r * n_t);
    for h in channels {
        if h.shape() != (n_r, n_t) {
            return Err(Error::invalid(format!(
                "channel is {}x{}, model expects {n_r}x{n_t}",
                h.nrows(),
                h.ncols()
            )));
        }
        data.extend(encode_input(h));
    }
    let x = Tensor::new(vec![channels.len(), c, n_r, n_t], data);
    predict_and_quantize(model, &x, grid)
}

/// Scores each candidate with the zero-forcing sum-rate on `channels` and
/// keeps the best; ties go to the lowest index. Returns the chosen
/// beamformer, its index and its score.
pub fn fuse_user_predictions(
    candidates: &[AnalogPair],
    channels: &[CMatrix],
    budget: &LinkBudget,
) -> Result<(HybridBeamformer, usize, f64)> {
    let mut best: Option<(usize, f64, CMatrix)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d = design_baseband(channels, &c.f_rf, &c.w_rf, budget)?;
        let better = match &best {
            None => true,
            Some((_, r, _)) => d.rate > *r,
        };
        if better {
            best = Some((i, d.rate, d.f_bb));
        }
    }
    let (i, rate, f_bb) = best.ok_or_else(|| Error::invalid("no candidate beamformers to fuse"))?;
    Ok((
        HybridBeamformer {
            f_rf: candidates[i].f_rf.clone(),
            w_rf: candidates[i].w_rf.clone(),
            f_bb,
            q_f: 0,
            q_w: 0,
        },
        i,
        rate,
    ))
}
