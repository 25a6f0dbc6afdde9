//! Zero-forcing hybrid beamforming and the exhaustive codebook search.
//!
//! The analog stage picks one quantized steering vector per user on each
//! side; the digital stage is the pseudo-inverse of the resulting K×K
//! effective channel with every column rescaled so that `‖F_RF f_k‖ = 1`.
//! The search scores every (q_F, q_W) pair by the log-det sum-rate and keeps
//! the best one, breaking ties toward the lexicographically smallest index.

use nalgebra::Cholesky;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::codebook::{CombinationSpace, Side, UserCandidates};
use crate::error::{Error, Result};
use crate::geometry::CMatrix;

/// Total transmit power and receiver noise variance, both linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub power: f64,
    pub noise: f64,
}

impl LinkBudget {
    pub fn new(power: f64, noise: f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite() && noise > 0.0 && noise.is_finite()) {
            return Err(Error::invalid(format!(
                "link budget needs positive finite P and σ², got P={power}, σ²={noise}"
            )));
        }
        Ok(LinkBudget { power, noise })
    }

    /// Operating SNR `10·log10(P/σ²)` with σ² = 1.
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        Self::new(10f64.powf(snr_db / 10.0), 1.0)
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise).log10()
    }
}

fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Scales every column of a unit-modulus matrix to entry modulus `1/√rows`.
pub fn analog_from_unimodular(m: &CMatrix) -> CMatrix {
    let s = 1.0 / (m.nrows() as f64).sqrt();
    m * Complex64::new(s, 0.0)
}

/// Row `k` is `w_kᴴ H_k F`.
pub fn effective_channel(w_sel: &CMatrix, channels: &[CMatrix], f_sel: &CMatrix) -> Result<CMatrix> {
    let k = channels.len();
    if k == 0 || w_sel.ncols() != k || f_sel.ncols() != k {
        return Err(Error::invalid(format!(
            "effective channel needs K columns on both sides: K={k}, W has {}, F has {}",
            w_sel.ncols(),
            f_sel.ncols()
        )));
    }
    let mut out = CMatrix::zeros(k, k);
    for (u, h) in channels.iter().enumerate() {
        if h.nrows() != w_sel.nrows() || h.ncols() != f_sel.nrows() {
            return Err(Error::invalid(format!(
                "user {u} channel is {}x{}, W is {}x{k}, F is {}x{k}",
                h.nrows(),
                h.ncols(),
                w_sel.nrows(),
                f_sel.nrows()
            )));
        }
        let row = w_sel.column(u).adjoint() * h * f_sel;
        out.set_row(u, &row);
    }
    Ok(out)
}

/// Moore–Penrose pseudo-inverse of the effective channel.
#[derive(Debug, Clone)]
pub struct ZfBaseband {
    pub f_bb: CMatrix,
    pub rank: usize,
}

impl ZfBaseband {
    pub fn full_rank(&self) -> bool {
        self.rank == self.f_bb.nrows().min(self.f_bb.ncols())
    }
}

/// Pseudo-inverse with singular values below `max(dims)·ε·σ_max` zeroed.
pub fn zf_baseband(h_eff: &CMatrix) -> ZfBaseband {
    let (r, c) = h_eff.shape();
    if r == 0 || c == 0 || !all_finite(h_eff) {
        return ZfBaseband {
            f_bb: CMatrix::zeros(c, r),
            rank: 0,
        };
    }
    let svd = h_eff.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = r.max(c) as f64 * f64::EPSILON * s_max;
    let mut rank = 0;
    let mut pinv = CMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            rank += 1;
            let v_i = v_t.row(i).adjoint();
            let u_i = u.column(i).adjoint();
            pinv += (v_i * u_i) * Complex64::new(1.0 / s, 0.0);
        }
    }
    ZfBaseband { f_bb: pinv, rank }
}

/// Rescales each column so that `‖F_RF f_k‖ = 1`, giving `‖F_RF F_BB‖_F² = K`.
pub fn normalize_baseband(f_rf: &CMatrix, f_bb: &CMatrix) -> Result<CMatrix> {
    if f_rf.ncols() != f_bb.nrows() {
        return Err(Error::invalid(format!(
            "F_RF has {} columns but F_BB has {} rows",
            f_rf.ncols(),
            f_bb.nrows()
        )));
    }
    let mut out = f_bb.clone();
    for j in 0..f_bb.ncols() {
        let norm = (f_rf * f_bb.column(j)).norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Degenerate(format!("column {j} of F_RF·F_BB has norm {norm}")));
        }
        out.column_mut(j).unscale_mut(norm);
    }
    Ok(out)
}

/// `log2 |I + P/(Kσ²) · H_eff F_BB F_BBᴴ H_effᴴ|` via Cholesky.
pub fn sum_rate_zf(h_eff: &CMatrix, f_bb: &CMatrix, budget: &LinkBudget) -> Result<f64> {
    if !all_finite(h_eff) || !all_finite(f_bb) {
        return Err(Error::invalid("non-finite effective channel or baseband precoder"));
    }
    if h_eff.ncols() != f_bb.nrows() {
        return Err(Error::invalid("H_eff and F_BB shapes do not chain"));
    }
    let k = h_eff.nrows();
    let g = h_eff * f_bb;
    let scale = budget.power / (k as f64 * budget.noise);
    let mut a = &g * g.adjoint() * Complex64::new(scale, 0.0);
    for i in 0..k {
        a[(i, i)] += Complex64::new(1.0, 0.0);
    }
    // enforce exact Hermitian symmetry before factoring
    let a = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let chol = Cholesky::new(a).ok_or_else(|| Error::invalid("log-det argument is not positive definite"))?;
    let l = chol.l_dirty();
    let logdet: f64 = (0..k).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    Ok((logdet / std::f64::consts::LN_2).max(0.0))
}

/// Per-user rates with multi-user interference in the denominator.
pub fn per_user_rates(
    channels: &[CMatrix],
    f_rf: &CMatrix,
    f_bb: &CMatrix,
    w_rf: &CMatrix,
    budget: &LinkBudget,
) -> Result<Vec<f64>> {
    let k = channels.len();
    if f_rf.ncols() != f_bb.nrows() || f_bb.ncols() != k {
        return Err(Error::invalid(format!(
            "F_RF is {}x{}, F_BB is {}x{}, expected K={k} streams",
            f_rf.nrows(),
            f_rf.ncols(),
            f_bb.nrows(),
            f_bb.ncols()
        )));
    }
    let precoder = f_rf * f_bb;
    // rows are w_kᴴ H_k F_RF F_BB
    let gains = effective_channel(w_rf, channels, &precoder)?;
    let per_stream = budget.power / k as f64;
    Ok((0..k)
        .map(|u| {
            let signal = per_stream * gains[(u, u)].norm_sqr();
            let interference: f64 = (0..k)
                .filter(|&n| n != u)
                .map(|n| gains[(u, n)].norm_sqr())
                .sum::<f64>()
                * per_stream;
            (1.0 + signal / (interference + budget.noise)).log2()
        })
        .collect())
}

pub fn system_sum_rate(
    channels: &[CMatrix],
    f_rf: &CMatrix,
    f_bb: &CMatrix,
    w_rf: &CMatrix,
    budget: &LinkBudget,
) -> Result<f64> {
    Ok(per_user_rates(channels, f_rf, f_bb, w_rf, budget)?.iter().sum())
}

#[derive(Debug, Clone)]
pub struct HybridBeamformer {
    /// N_T×K, entries of modulus `1/√N_T`.
    pub f_rf: CMatrix,
    /// N_R×K, entries of modulus `1/√N_R`.
    pub w_rf: CMatrix,
    /// K×K, normalized so that `‖F_RF F_BB‖_F² = K`.
    pub f_bb: CMatrix,
    /// 1-based source indices when the beamformer came from a codebook search.
    pub q_f: usize,
    pub q_w: usize,
}

impl HybridBeamformer {
    pub fn sum_rate(&self, channels: &[CMatrix], budget: &LinkBudget) -> Result<f64> {
        system_sum_rate(channels, &self.f_rf, &self.f_bb, &self.w_rf, budget)
    }
}

/// Zero-forcing digital stage for fixed analog beamformers.
#[derive(Debug, Clone)]
pub struct BasebandDesign {
    pub f_bb: CMatrix,
    /// Log-det sum-rate, or `-∞` for rank-deficient or degenerate designs.
    pub rate: f64,
    pub full_rank: bool,
}

/// Builds the effective channel, inverts it, normalizes and scores it.
/// `f_rf` and `w_rf` are the scaled analog matrices.
pub fn design_baseband(
    channels: &[CMatrix],
    f_rf: &CMatrix,
    w_rf: &CMatrix,
    budget: &LinkBudget,
) -> Result<BasebandDesign> {
    let h_eff = effective_channel(w_rf, channels, f_rf)?;
    Ok(design_from_effective(&h_eff, f_rf, budget))
}

fn design_from_effective(h_eff: &CMatrix, f_rf: &CMatrix, budget: &LinkBudget) -> BasebandDesign {
    let zf = zf_baseband(h_eff);
    let full_rank = zf.full_rank();
    if !full_rank {
        return BasebandDesign {
            f_bb: zf.f_bb,
            rate: f64::NEG_INFINITY,
            full_rank,
        };
    }
    match normalize_baseband(f_rf, &zf.f_bb) {
        Ok(f_bb) => {
            let rate = sum_rate_zf(h_eff, &f_bb, budget).unwrap_or(f64::NEG_INFINITY);
            BasebandDesign { f_bb, rate, full_rank }
        }
        Err(_) => BasebandDesign {
            f_bb: zf.f_bb,
            rate: f64::NEG_INFINITY,
            full_rank,
        },
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SearchOptions {
    /// Keep the rate of every combination, row-major in (q_F, q_W).
    pub keep_table: bool,
    /// Spread the q_F range over the current rayon pool.
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: HybridBeamformer,
    pub best_rate: f64,
    pub visited: usize,
    pub rate_table: Option<Vec<f64>>,
}

impl SearchResult {
    pub fn table_rate(&self, q_f: usize, q_w: usize, q_w_count: usize) -> Option<f64> {
        self.rate_table.as_ref().map(|t| t[(q_f - 1) * q_w_count + (q_w - 1)])
    }
}

#[derive(Debug, Clone, Copy)]
struct Best {
    rate: f64,
    q_f: usize,
    q_w: usize,
}

impl Best {
    const NONE: Best = Best {
        rate: f64::NEG_INFINITY,
        q_f: usize::MAX,
        q_w: usize::MAX,
    };

    /// Higher rate wins; equal rates go to the smaller (q_F, q_W).
    fn pick(self, other: Best) -> Best {
        if other.rate > self.rate || (other.rate == self.rate && (other.q_f, other.q_w) < (self.q_f, self.q_w)) {
            other
        } else {
            self
        }
    }
}

fn materialize(space: &CombinationSpace, candidates: &[UserCandidates], side: Side, q: usize) -> CMatrix {
    let sel = space.decode(q).expect("index within combination space");
    let cols: Vec<_> = candidates
        .iter()
        .zip(&sel)
        .map(|(c, &l)| c.side(side)[l - 1].clone())
        .collect();
    analog_from_unimodular(&CMatrix::from_columns(&cols))
}

fn validate_inputs(channels: &[CMatrix], candidates: &[UserCandidates]) -> Result<()> {
    if candidates.is_empty() || channels.is_empty() {
        return Err(Error::invalid("exhaustive search needs at least one user"));
    }
    if candidates.len() != channels.len() {
        return Err(Error::invalid(format!(
            "{} channels but {} candidate sets",
            channels.len(),
            candidates.len()
        )));
    }
    let (n_r, n_t) = channels[0].shape();
    for (u, (h, c)) in channels.iter().zip(candidates).enumerate() {
        if h.shape() != (n_r, n_t) {
            return Err(Error::invalid(format!("user {u} channel shape differs from user 0")));
        }
        if c.tx().iter().any(|v| v.len() != n_t) || c.rx().iter().any(|v| v.len() != n_r) {
            return Err(Error::invalid(format!(
                "user {u} candidates do not match a {n_r}x{n_t} channel"
            )));
        }
    }
    Ok(())
}

/// Visits every (q_F, q_W) combination and returns the sum-rate maximizer.
pub fn exhaustive_search(
    channels: &[CMatrix],
    candidates: &[UserCandidates],
    budget: &LinkBudget,
    options: SearchOptions,
) -> Result<SearchResult> {
    validate_inputs(channels, candidates)?;
    let f_space = CombinationSpace::for_side(candidates, Side::Tx)?;
    let w_space = CombinationSpace::for_side(candidates, Side::Rx)?;
    let (q_f_count, q_w_count) = (f_space.len(), w_space.len());
    let w_all: Vec<CMatrix> = (1..=q_w_count)
        .map(|q| materialize(&w_space, candidates, Side::Rx, q))
        .collect();
    let k = channels.len();

    let scan = |q_f: usize| -> (Best, Vec<f64>) {
        let f_rf = materialize(&f_space, candidates, Side::Tx, q_f);
        let hf: Vec<CMatrix> = channels.iter().map(|h| h * &f_rf).collect();
        let mut best = Best::NONE;
        let mut rates = Vec::with_capacity(if options.keep_table { q_w_count } else { 0 });
        let mut h_eff = CMatrix::zeros(k, k);
        for (qi, w_rf) in w_all.iter().enumerate() {
            for (u, hf_u) in hf.iter().enumerate() {
                let row = w_rf.column(u).adjoint() * hf_u;
                h_eff.set_row(u, &row);
            }
            let rate = design_from_effective(&h_eff, &f_rf, budget).rate;
            if options.keep_table {
                rates.push(rate);
            }
            best = best.pick(Best { rate, q_f, q_w: qi + 1 });
        }
        (best, rates)
    };

    let per_f: Vec<(Best, Vec<f64>)> = if options.parallel {
        (1..=q_f_count).into_par_iter().map(scan).collect()
    } else {
        (1..=q_f_count).map(scan).collect()
    };

    let mut best = per_f.iter().fold(Best::NONE, |acc, (b, _)| acc.pick(*b));
    if best.q_f == usize::MAX {
        best = Best {
            rate: f64::NEG_INFINITY,
            q_f: 1,
            q_w: 1,
        };
    }
    let rate_table = options
        .keep_table
        .then(|| per_f.into_iter().flat_map(|(_, r)| r).collect());

    let f_rf = materialize(&f_space, candidates, Side::Tx, best.q_f);
    let w_rf = materialize(&w_space, candidates, Side::Rx, best.q_w);
    let design = design_baseband(channels, &f_rf, &w_rf, budget)?;
    Ok(SearchResult {
        best: HybridBeamformer {
            f_rf,
            w_rf,
            f_bb: design.f_bb,
            q_f: best.q_f,
            q_w: best.q_w,
        },
        best_rate: best.rate,
        visited: q_f_count * q_w_count,
        rate_table,
    })
}

/// Fully digital, interference-free benchmark:
/// `Σ_k log2(1 + P/(Kσ²) · σ_max(H_k)²)`.
pub fn no_interference_bound(channels: &[CMatrix], budget: &LinkBudget) -> f64 {
    let k = channels.len();
    if k == 0 {
        return 0.0;
    }
    let scale = budget.power / (k as f64 * budget.noise);
    channels
        .iter()
        .map(|h| {
            let s = if h.is_empty() {
                0.0
            } else {
                h.singular_values().iter().copied().fold(0.0, f64::max)
            };
            (1.0 + scale * s * s).log2()
        })
        .sum()
}

/// Builds a beamformer by picking one candidate per user on each side.
pub fn beamformer_from_selection(
    channels: &[CMatrix],
    candidates: &[UserCandidates],
    tx_sel: &[usize],
    rx_sel: &[usize],
    budget: &LinkBudget,
) -> Result<(HybridBeamformer, f64)> {
    validate_inputs(channels, candidates)?;
    let f_space = CombinationSpace::for_side(candidates, Side::Tx)?;
    let w_space = CombinationSpace::for_side(candidates, Side::Rx)?;
    let q_f = f_space.encode(tx_sel)?;
    let q_w = w_space.encode(rx_sel)?;
    let f_rf = materialize(&f_space, candidates, Side::Tx, q_f);
    let w_rf = materialize(&w_space, candidates, Side::Rx, q_w);
    let d = design_baseband(channels, &f_rf, &w_rf, budget)?;
    Ok((
        HybridBeamformer {
            f_rf,
            w_rf,
            f_bb: d.f_bb,
            q_f,
            q_w,
        },
        d.rate,
    ))
}
