//! Debiased Sinkhorn divergence between uniform point clouds.
//!
//! `S(a, b) = OT(a, b) - OT(a, a) / 2 - OT(b, b) / 2` with the entropic
//! transport cost `OT` solved in the log domain. The regularization starts
//! at the largest pairwise cost and is multiplied by `scaling` each round,
//! potentials carried over, until it reaches `epsilon`. Each intermediate
//! round runs at most `level_iters` updates; at the final value the updates
//! continue until the largest marginal error is below `tol`.
//!
//! Cross terms use alternating updates of the two potentials; self terms use
//! the averaged update of a single potential. Inputs are put in a canonical
//! order first, so the divergence is exactly symmetric and exactly zero for
//! equal multisets.
//!
//! The ground cost is the Euclidean distance, so the divergence tracks W1.
//! Cost matrices are kept dense. Above [`F32_ENTRY_LIMIT`] entries they are
//! stored in single precision, which halves memory and doubles SIMD width.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointCloud;

/// Matrices larger than this many entries use f32 storage under
/// [`CostPrecision::Auto`].
pub const F32_ENTRY_LIMIT: usize = 1 << 25;

const ROW_BLOCK: usize = 16;
const COL_BLOCK: usize = 1024;

static CLAMPED_NEGATIVES: AtomicU64 = AtomicU64::new(0);

/// Number of debiased values that came out negative and were clamped to 0.
pub fn clamped_negative_count() -> u64 {
    CLAMPED_NEGATIVES.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CostKind {
    #[default]
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CostPrecision {
    #[default]
    Auto,
    Double,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub scaling: f64,
    /// Total update budget across all regularization levels.
    pub max_iters: usize,
    /// Updates allowed per intermediate level; a level ends early once its
    /// marginal error is below `tol`.
    pub level_iters: usize,
    pub tol: f64,
    pub cost: CostKind,
    pub precision: CostPrecision,
    /// When false, running out of iterations returns the current estimate
    /// (flagged as not converged) instead of an error.
    pub strict: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            scaling: 0.9,
            max_iters: 10_000,
            level_iters: 30,
            tol: 1e-6,
            cost: CostKind::Euclidean,
            precision: CostPrecision::Auto,
            strict: true,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.scaling > 0.0 && self.scaling < 1.0) {
            return Err(Error::Config(format!(
                "scaling must lie in (0, 1), got {}",
                self.scaling
            )));
        }
        if self.max_iters == 0 || self.level_iters == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }

    /// Annealed regularization values, ending exactly at `epsilon`.
    pub fn schedule(&self, max_cost: f64) -> Vec<f64> {
        let mut eps = Vec::new();
        let mut e = max_cost;
        while e > self.epsilon {
            eps.push(e);
            e *= self.scaling;
        }
        eps.push(self.epsilon);
        eps
    }
}

/// Converged entropic transport problem.
#[derive(Clone, Debug)]
pub struct EntropicOt {
    /// Dual value `<a, f> + <b, g>`.
    pub value: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub violation: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct SinkhornReport {
    pub divergence: f64,
    /// Value before clamping at zero.
    pub raw: f64,
    pub cross: EntropicOt,
    pub self_a: EntropicOt,
    pub self_b: EntropicOt,
}

/// Scalar storage for cost matrices.
trait Real: Copy + Send + Sync + PartialOrd + std::fmt::Debug + 'static {
    const NEG_INF: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
    fn max(self, o: Self) -> Self;
    fn mul_sub(h: Self, c: Self, inv: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn add(self, o: Self) -> Self;
    /// Fast e^x, accurate on the normal range and clamped outside it.
    fn exp_nonpos(self) -> Self;
}

impl Real for f64 {
    const NEG_INF: Self = f64::NEG_INFINITY;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn zero() -> Self {
        0.0
    }
    #[inline(always)]
    fn max(self, o: Self) -> Self {
        if self > o {
            self
        } else {
            o
        }
    }
    #[inline(always)]
    fn mul_sub(h: Self, c: Self, inv: Self) -> Self {
        h - c * inv
    }
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        self - o
    }
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        self + o
    }
    #[inline(always)]
    fn exp_nonpos(self) -> Self {
        exp_f64(self)
    }
}

impl Real for f32 {
    const NEG_INF: Self = f32::NEG_INFINITY;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn zero() -> Self {
        0.0
    }
    #[inline(always)]
    fn max(self, o: Self) -> Self {
        if self > o {
            self
        } else {
            o
        }
    }
    #[inline(always)]
    fn mul_sub(h: Self, c: Self, inv: Self) -> Self {
        h - c * inv
    }
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        self - o
    }
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        self + o
    }
    #[inline(always)]
    fn exp_nonpos(self) -> Self {
        exp_f32(self)
    }
}

/// Branch-free e^x for x <= 0 (Cephes expf polynomial). Inputs below -87
/// return e^-87 instead of 0, which is below every sum this is used in.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // 1.5 * 2^23: adding it rounds to an integer held in the low mantissa bits.
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let kr = x * LOG2E + ROUND;
    let k = kr - ROUND;
    let r = x - k * LN2_HI - k * LN2_LO;
    let z = r * r;
    let p = (((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2)
        * r
        + 1.666_666_5e-1)
        * r
        + 5.000_000_1e-1)
        * z
        + r
        + 1.0;
    let ki = kr.to_bits().wrapping_sub(ROUND.to_bits()) as i32;
    p * f32::from_bits(((ki + 127) as u32) << 23)
}

/// Branch-free e^x on [-708, 709] with ~1 ulp accuracy; clamps outside.
#[inline(always)]
fn exp_f64(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_9e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 1.5 * 2^52
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 709.0);
    let kr = x * LOG2E + ROUND;
    let k = kr - ROUND;
    let r = x - k * LN2_HI - k * LN2_LO;
    // Taylor series to degree 13 on |r| <= ln2/2.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let ki = kr.to_bits().wrapping_sub(ROUND.to_bits()) as i64;
    p * f64::from_bits(((ki + 1023) as u64) << 52)
}

/// A shifted sum is trusted when it is far from both under- and overflow.
#[inline]
fn sum_is_safe(s: f64) -> bool {
    s.is_finite() && (1e-20..=1e30).contains(&s)
}

/// Dense row-major Euclidean cost matrix.
struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    max: f64,
}

/// `sum_j exp(h_j - c_j * inv + shift)` with 16 independent lanes.
#[inline]
fn shifted_row_sum<T: Real>(row: &[T], h: &[T], inv: T, shift: T) -> f64 {
    let mut acc = [T::zero(); ROW_BLOCK];
    let mut rc = row.chunks_exact(ROW_BLOCK);
    let mut hc = h.chunks_exact(ROW_BLOCK);
    for (c, hh) in (&mut rc).zip(&mut hc) {
        for l in 0..ROW_BLOCK {
            acc[l] = acc[l].add(T::mul_sub(hh[l], c[l], inv).add(shift).exp_nonpos());
        }
    }
    let mut s: f64 = acc.iter().map(|v| v.to_f64()).sum();
    for (c, hh) in rc.remainder().iter().zip(hc.remainder()) {
        s += T::mul_sub(*hh, *c, inv).add(shift).exp_nonpos().to_f64();
    }
    s
}

/// Exact `log sum_j exp(h_j - c_j * inv)` with a max pass.
fn row_lse<T: Real>(row: &[T], h: &[T], inv: T) -> f64 {
    let mut mx = [T::NEG_INF; ROW_BLOCK];
    let mut rc = row.chunks_exact(ROW_BLOCK);
    let mut hc = h.chunks_exact(ROW_BLOCK);
    for (c, hh) in (&mut rc).zip(&mut hc) {
        for l in 0..ROW_BLOCK {
            mx[l] = mx[l].max(T::mul_sub(hh[l], c[l], inv));
        }
    }
    let mut m = mx.iter().fold(T::NEG_INF, |a, &b| a.max(b));
    for (c, hh) in rc.remainder().iter().zip(hc.remainder()) {
        m = m.max(T::mul_sub(*hh, *c, inv));
    }
    let neg_m = T::zero().sub(m);
    m.to_f64() + shifted_row_sum(row, h, inv, neg_m).ln()
}

impl<T: Real> CostMatrix<T> {
    fn build(x: &PointCloud, y: &PointCloud) -> Self {
        // Tiles of x rows against blocks of y rows held transposed, so the
        // inner loop runs across LANES pairs at once.
        const X_TILE: usize = 64;
        const Y_BLOCK: usize = 32;
        const LANES: usize = 16;
        let (rows, cols, dim) = (x.len(), y.len(), x.dim());
        let mut data = vec![T::zero(); rows * cols];
        let max = data
            .par_chunks_mut(cols * X_TILE)
            .enumerate()
            .map(|(t, tile)| {
                let mut m = 0.0f64;
                let mut yt = vec![0.0f64; dim * Y_BLOCK];
                for j0 in (0..cols).step_by(Y_BLOCK) {
                    let w = (cols - j0).min(Y_BLOCK);
                    let wp = w.div_ceil(LANES) * LANES;
                    for l in 0..wp {
                        // Padding lanes repeat the last column and are dropped.
                        let yr = y.row(j0 + l.min(w - 1));
                        for k in 0..dim {
                            yt[k * Y_BLOCK + l] = yr[k];
                        }
                    }
                    for (r, row) in tile.chunks_exact_mut(cols).enumerate() {
                        let xi = x.row(t * X_TILE + r);
                        for l0 in (0..wp).step_by(LANES) {
                            let mut acc = [0.0f64; LANES];
                            for (&xk, ycol) in xi.iter().zip(yt.chunks_exact(Y_BLOCK)) {
                                let yk: &[f64; LANES] =
                                    ycol[l0..l0 + LANES].try_into().expect("lane block");
                                for l in 0..LANES {
                                    let d = xk - yk[l];
                                    acc[l] = d.mul_add(d, acc[l]);
                                }
                            }
                            for l in 0..LANES.min(w - l0) {
                                let d = acc[l].sqrt();
                                m = m.max(d);
                                row[j0 + l0 + l] = T::from_f64(d);
                            }
                        }
                    }
                }
                m
            })
            .reduce(|| 0.0, f64::max);
        Self {
            rows,
            cols,
            data,
            max,
        }
    }

    /// `out_i = log sum_j exp(h_j - C_ij / eps + shift_i)`.
    ///
    /// The shift is the caller's current estimate of minus the result, so the
    /// sum is near 1 and a single pass suffices; rows whose sum drifts out of
    /// the safe range are redone with an exact max pass.
    fn lse_rows(&self, h: &[T], shift: &[T], eps: f64, out: &mut [f64]) {
        let inv = T::from_f64(1.0 / eps);
        out.par_iter_mut()
            .zip(self.data.par_chunks(self.cols))
            .zip(shift.par_iter())
            .for_each(|((o, row), &sh)| {
                let s = shifted_row_sum(row, h, inv, sh);
                *o = if sum_is_safe(s) {
                    s.ln()
                } else {
                    row_lse(row, h, inv) + sh.to_f64()
                };
            });
    }

    /// `out_j = log sum_i exp(h_i - C_ij / eps + shift_j)`, column version of
    /// [`Self::lse_rows`] that streams the matrix row by row.
    fn lse_cols(&self, h: &[T], shift: &[T], eps: f64, out: &mut [f64]) {
        let inv = T::from_f64(1.0 / eps);
        let cols = self.cols;
        out.par_chunks_mut(COL_BLOCK)
            .enumerate()
            .for_each(|(b, o)| {
                let j0 = b * COL_BLOCK;
                let w = o.len();
                let sh = &shift[j0..j0 + w];
                let mut acc = vec![T::zero(); w];
                for (i, hi) in h.iter().enumerate() {
                    let seg = &self.data[i * cols + j0..i * cols + j0 + w];
                    for ((a, c), s) in acc.iter_mut().zip(seg).zip(sh) {
                        *a = a.add(T::mul_sub(*hi, *c, inv).add(*s).exp_nonpos());
                    }
                }
                if acc.iter().all(|a| sum_is_safe(a.to_f64())) {
                    for (oj, a) in o.iter_mut().zip(&acc) {
                        *oj = a.to_f64().ln();
                    }
                    return;
                }
                let mut mx = vec![T::NEG_INF; w];
                for (i, hi) in h.iter().enumerate() {
                    let seg = &self.data[i * cols + j0..i * cols + j0 + w];
                    for (m, c) in mx.iter_mut().zip(seg) {
                        *m = m.max(T::mul_sub(*hi, *c, inv));
                    }
                }
                acc.iter_mut().for_each(|a| *a = T::zero());
                for (i, hi) in h.iter().enumerate() {
                    let seg = &self.data[i * cols + j0..i * cols + j0 + w];
                    for ((a, c), m) in acc.iter_mut().zip(seg).zip(&mx) {
                        *a = a.add(T::mul_sub(*hi, *c, inv).sub(*m).exp_nonpos());
                    }
                }
                for (((oj, a), m), s) in o.iter_mut().zip(&acc).zip(&mx).zip(sh) {
                    *oj = m.to_f64() + a.to_f64().ln() + s.to_f64();
                }
            });
    }
}

fn scaled<T: Real>(offset: f64, pot: &[f64], eps: f64, out: &mut Vec<T>) {
    out.clear();
    out.extend(pot.iter().map(|p| T::from_f64(offset + p / eps)));
}

/// One c-transform of the potential pair.
///
/// With `log_sums[i] = log sum_j b_j exp((f_i + g_j - C_ij) / eps)` the
/// transformed potential is `f_i - eps * log_sums[i]` and the plan's row
/// mass is `a_i * exp(log_sums[i])`.
struct Workspace<T> {
    h: Vec<T>,
    shift: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new() -> Self {
        Self {
            h: Vec::new(),
            shift: Vec::new(),
        }
    }

    fn rows(
        &mut self,
        c: &CostMatrix<T>,
        f: &[f64],
        g: &[f64],
        log_b: f64,
        eps: f64,
        out: &mut [f64],
    ) {
        scaled(log_b, g, eps, &mut self.h);
        scaled(0.0, f, eps, &mut self.shift);
        c.lse_rows(&self.h, &self.shift, eps, out);
    }

    fn cols(
        &mut self,
        c: &CostMatrix<T>,
        f: &[f64],
        g: &[f64],
        log_a: f64,
        eps: f64,
        out: &mut [f64],
    ) {
        scaled(log_a, f, eps, &mut self.h);
        scaled(0.0, g, eps, &mut self.shift);
        c.lse_cols(&self.h, &self.shift, eps, out);
    }
}

/// Largest `|w * exp(log_sum) - w|` over a marginal.
fn marginal_violation(w: f64, log_sums: &[f64]) -> f64 {
    log_sums
        .iter()
        .map(|l| (w * l.exp_m1()).abs())
        .fold(0.0, f64::max)
}

/// Log-domain Sinkhorn with alternating updates and annealed
/// regularization.
fn solve<T: Real>(c: &CostMatrix<T>, cfg: &SinkhornConfig) -> Result<EntropicOt> {
    let (n, m) = (c.rows, c.cols);
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    let a = log_a.exp();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut lr = vec![0.0; n];
    let mut lc = vec![0.0; m];
    let mut ws = Workspace::<T>::new();
    let schedule = cfg.schedule(c.max);
    let last = schedule.len() - 1;
    let mut iterations = 0;
    for (level, &e) in schedule.iter().enumerate() {
        let mut inner = 0;
        loop {
            // Row masses of the current plan; the columns are exact after
            // each g update, so this is the full marginal error.
            ws.rows(c, &f, &g, log_b, e, &mut lr);
            let violation = marginal_violation(a, &lr);
            if level == last {
                if let Some(done) = finish(cfg, iterations, violation, || {
                    f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64
                }) {
                    let (value, converged) = done?;
                    return Ok(EntropicOt {
                        value,
                        f,
                        g,
                        iterations,
                        violation,
                        converged,
                    });
                }
            } else if inner > 0 && violation <= cfg.tol {
                break;
            }
            f.iter_mut().zip(&lr).for_each(|(p, l)| *p -= e * l);
            ws.cols(c, &f, &g, log_a, e, &mut lc);
            g.iter_mut().zip(&lc).for_each(|(p, l)| *p -= e * l);
            iterations += 1;
            inner += 1;
            if level != last && inner >= cfg.level_iters {
                break;
            }
        }
    }
    unreachable!("the final level always returns")
}

/// Symmetric problem: a single potential with averaged updates
/// `f <- (f + T(f)) / 2`, one matrix pass per iteration.
fn solve_self<T: Real>(c: &CostMatrix<T>, cfg: &SinkhornConfig) -> Result<EntropicOt> {
    let n = c.rows;
    let log_a = -(n as f64).ln();
    let a = log_a.exp();
    let mut f = vec![0.0; n];
    let mut lr = vec![0.0; n];
    let mut ws = Workspace::<T>::new();
    let schedule = cfg.schedule(c.max);
    let last = schedule.len() - 1;
    let mut iterations = 0;
    for (level, &e) in schedule.iter().enumerate() {
        let mut inner = 0;
        loop {
            ws.rows(c, &f, &f, log_a, e, &mut lr);
            let violation = marginal_violation(a, &lr);
            if level == last {
                if let Some(done) = finish(cfg, iterations, violation, || {
                    2.0 * f.iter().sum::<f64>() / n as f64
                }) {
                    let (value, converged) = done?;
                    return Ok(EntropicOt {
                        value,
                        g: f.clone(),
                        f,
                        iterations,
                        violation,
                        converged,
                    });
                }
            } else if inner > 0 && violation <= cfg.tol {
                break;
            }
            f.iter_mut().zip(&lr).for_each(|(p, l)| *p -= 0.5 * e * l);
            iterations += 1;
            inner += 1;
            if level != last && inner >= cfg.level_iters {
                break;
            }
        }
    }
    unreachable!("the final level always returns")
}

/// Stopping decision at the final regularization: `None` to keep going.
fn finish(
    cfg: &SinkhornConfig,
    iterations: usize,
    violation: f64,
    value: impl FnOnce() -> f64,
) -> Option<Result<(f64, bool)>> {
    let converged = violation <= cfg.tol;
    if !converged && iterations < cfg.max_iters {
        return None;
    }
    if !converged && cfg.strict {
        return Some(Err(Error::Convergence {
            iterations,
            violation,
        }));
    }
    Some(Ok((value(), converged)))
}

fn solve_dense(
    x: &PointCloud,
    y: &PointCloud,
    symmetric: bool,
    cfg: &SinkhornConfig,
) -> Result<EntropicOt> {
    fn run<T: Real>(c: CostMatrix<T>, symmetric: bool, cfg: &SinkhornConfig) -> Result<EntropicOt> {
        if symmetric {
            solve_self(&c, cfg)
        } else {
            solve(&c, cfg)
        }
    }
    if use_single(cfg, x.len() * y.len()) {
        run(CostMatrix::<f32>::build(x, y), symmetric, cfg)
    } else {
        run(CostMatrix::<f64>::build(x, y), symmetric, cfg)
    }
}

/// Orders two clouds by size, then lexicographically by coordinates.
fn canonical_order(x: &PointCloud, y: &PointCloud) -> std::cmp::Ordering {
    x.len().cmp(&y.len()).then_with(|| {
        x.as_flat()
            .iter()
            .zip(y.as_flat())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Rows sorted lexicographically, with `perm[k]` the original index of
/// sorted row k. Uniform OT does not see row order, so solving on sorted
/// rows makes results independent of how the sets were listed.
fn sorted_rows(x: &PointCloud) -> (PointCloud, Vec<usize>) {
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.sort_by(|&i, &j| {
        x.row(i)
            .iter()
            .zip(x.row(j))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut flat = Vec::with_capacity(x.as_flat().len());
    perm.iter().for_each(|&i| flat.extend_from_slice(x.row(i)));
    (
        PointCloud::from_flat(x.dim(), flat).expect("same shape"),
        perm,
    )
}

fn unsort(pot: Vec<f64>, perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; pot.len()];
    perm.iter().zip(pot).for_each(|(&i, v)| out[i] = v);
    out
}

fn use_single(cfg: &SinkhornConfig, entries: usize) -> bool {
    match cfg.precision {
        CostPrecision::Auto => entries > F32_ENTRY_LIMIT,
        CostPrecision::Double => false,
        CostPrecision::Single => true,
    }
}

fn check_clouds(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Config("point sets must be non-empty".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Entropic OT between the uniform measures on `x` and `y`.
///
/// Both sets are put in canonical row order and the pair is solved in a
/// canonical orientation, so the value does not depend on argument order or
/// on row order. Equal multisets are solved as a self problem.
pub fn entropic_ot(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<EntropicOt> {
    check_clouds(x, y)?;
    cfg.validate()?;
    let (xs, px) = sorted_rows(x);
    let (ys, py) = sorted_rows(y);
    let (f, g, r) = match canonical_order(&xs, &ys) {
        std::cmp::Ordering::Equal => {
            let mut r = solve_dense(&xs, &xs, true, cfg)?;
            (std::mem::take(&mut r.f), std::mem::take(&mut r.g), r)
        }
        std::cmp::Ordering::Less => {
            let mut r = solve_dense(&xs, &ys, false, cfg)?;
            (std::mem::take(&mut r.f), std::mem::take(&mut r.g), r)
        }
        std::cmp::Ordering::Greater => {
            let mut r = solve_dense(&ys, &xs, false, cfg)?;
            (std::mem::take(&mut r.g), std::mem::take(&mut r.f), r)
        }
    };
    Ok(EntropicOt {
        f: unsort(f, &px),
        g: unsort(g, &py),
        ..r
    })
}

/// Entropic OT of the uniform measure on `x` with itself.
pub fn entropic_ot_self(x: &PointCloud, cfg: &SinkhornConfig) -> Result<EntropicOt> {
    check_clouds(x, x)?;
    cfg.validate()?;
    let (xs, px) = sorted_rows(x);
    let r = solve_dense(&xs, &xs, true, cfg)?;
    Ok(EntropicOt {
        g: unsort(r.g.clone(), &px),
        f: unsort(r.f.clone(), &px),
        ..r
    })
}

/// Combine precomputed cross and self terms into the debiased divergence.
pub fn debias(cross: EntropicOt, self_a: EntropicOt, self_b: EntropicOt) -> SinkhornReport {
    let raw = cross.value - 0.5 * (self_a.value + self_b.value);
    let divergence = if raw < 0.0 {
        CLAMPED_NEGATIVES.fetch_add(1, Ordering::Relaxed);
        log::warn!("debiased Sinkhorn value {raw:e} clamped to 0");
        0.0
    } else {
        raw
    };
    SinkhornReport {
        divergence,
        raw,
        cross,
        self_a,
        self_b,
    }
}

pub fn sinkhorn_report(
    a: &PointCloud,
    b: &PointCloud,
    cfg: &SinkhornConfig,
) -> Result<SinkhornReport> {
    let cross = entropic_ot(a, b, cfg)?;
    let self_a = entropic_ot_self(a, cfg)?;
    let self_b = entropic_ot_self(b, cfg)?;
    Ok(debias(cross, self_a, self_b))
}

/// Debiased Sinkhorn divergence with Euclidean ground cost, clamped at 0.
pub fn sinkhorn_divergence(a: &PointCloud, b: &PointCloud, cfg: &SinkhornConfig) -> Result<f64> {
    Ok(sinkhorn_report(a, b, cfg)?.divergence)
}
