//! Norms, ranks, stationarity residuals, the min-norm baseline and the
//! uncertainty inequalities.
//!
//! The regularizer is the `d_ρ`-weighted Schatten quasi-norm
//! `‖β̂‖_p = [Σ_ρ d_ρ Σ_i σ_{ρ,i}^p]^{1/p}`, with `p = 2/L` for an
//! `L`-layer network. Every quantity here is invariant under a unitary change
//! of basis inside each irrep.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gcnn::{Activation, ArchitectureSpec, Dataset, NetworkParams};
use crate::linalg::{dot, least_squares, nnls, singular_values, CMat, Svd};
use crate::repr::{FourierBlocks, IrrepSet};

/// Default relative tolerance for ranks and supports.
pub const RANK_TOL: f64 = 1e-6;
/// Singular values below this fraction of the largest count as zero when
/// forming negative powers.
pub const SUPPORT_CUTOFF: f64 = 1e-14;
/// Margin slack defining the active set in the dual fit.
pub const ACTIVE_MARGIN_TOL: f64 = 1e-3;

/// `[Σ_ρ d_ρ Σ_i σ_{ρ,i}^p]^{1/p}`.
pub fn schatten_quasi_norm(blocks: &FourierBlocks, p: f64) -> Result<f64> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::Numerical(format!("Schatten exponent must be positive, got {p}")));
    }
    if blocks.blocks.iter().any(|b| b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
        return Err(Error::Numerical("non-finite Fourier block".into()));
    }
    let s: f64 = blocks.blocks.iter().map(|b| b.nrows() as f64 * singular_values(b).iter().map(|&x| x.powf(p)).sum::<f64>()).sum();
    Ok(s.powf(1.0 / p))
}

/// The regularizer written as `[Σ_ρ d_ρ (‖β̂(ρ)‖_{2/L})^{2/L}]^{L/2}`.
pub fn fourier_regularizer(blocks: &FourierBlocks, layers: usize) -> Result<f64> {
    let p = 2.0 / layers as f64;
    let mut s = 0.0;
    for b in &blocks.blocks {
        let inner = singular_values(b).iter().map(|&x| x.powf(p)).sum::<f64>().powf(1.0 / p);
        s += b.nrows() as f64 * inner.powf(p);
    }
    Ok(s.powf(layers as f64 / 2.0))
}

/// `(Σ_u |f(u)|^p)^{1/p}`.
pub fn real_quasi_norm(f: &[f64], p: f64) -> f64 {
    f.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Per-block numerical ranks and real-space support size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankProfile {
    pub ranks: Vec<usize>,
    pub support: usize,
    /// `Σ_ρ d_ρ rank(f̂(ρ))`.
    pub weighted_rank: usize,
}

/// Ranks count singular values above `tol · σ_max` (largest over all
/// blocks); support counts `|f(u)| > tol · ‖f‖_∞`.
pub fn rank_support_profile(f: &[f64], blocks: &FourierBlocks, tol: f64) -> RankProfile {
    let svs: Vec<Vec<f64>> = blocks.blocks.iter().map(singular_values).collect();
    let smax = svs.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
    let ranks: Vec<usize> =
        if smax == 0.0 { vec![0; svs.len()] } else { svs.iter().map(|s| s.iter().filter(|&&x| x > tol * smax).count()).collect() };
    let fmax = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let support = if fmax == 0.0 { 0 } else { f.iter().filter(|x| x.abs() > tol * fmax).count() };
    let weighted_rank = ranks.iter().zip(&blocks.blocks).map(|(r, b)| r * b.nrows()).sum();
    RankProfile { ranks, support, weighted_rank }
}

/// Norms of one predictor.
#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub p_values: Vec<f64>,
    pub real_norms: Vec<f64>,
    pub fourier_schatten: Vec<f64>,
    pub singular_values: Vec<Vec<f64>>,
    pub ranks: Vec<usize>,
    pub support: usize,
}

pub fn norm_report(beta: &[f64], irreps: &IrrepSet, p_values: &[f64], tol: f64) -> Result<NormReport> {
    let blocks = irreps.gft(beta)?;
    let profile = rank_support_profile(beta, &blocks, tol);
    Ok(NormReport {
        p_values: p_values.to_vec(),
        real_norms: p_values.iter().map(|&p| real_quasi_norm(beta, p)).collect(),
        fourier_schatten: p_values.iter().map(|&p| schatten_quasi_norm(&blocks, p)).collect::<Result<_>>()?,
        singular_values: blocks.blocks.iter().map(singular_values).collect(),
        ranks: profile.ranks,
        support: profile.support,
    })
}

/// One uncertainty inequality `lhs ≥ rhs`.
#[derive(Clone, Debug, Serialize)]
pub struct TheoremCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl TheoremCheck {
    fn new(lhs: f64, rhs: f64) -> TheoremCheck {
        TheoremCheck { lhs, rhs, satisfied: lhs >= rhs * (1.0 - 1e-9) }
    }
}

/// Results of the uncertainty inequalities for one signal.
#[derive(Clone, Debug, Serialize)]
pub struct UncertaintyReport {
    /// `(‖f‖₁/‖f‖_∞)(‖Ff‖₁/‖Ff‖_∞) ≥ |G|`; abelian groups only.
    pub donoho_stark: Option<TheoremCheck>,
    /// `|supp f| · Σ_ρ d_ρ rank f̂(ρ) ≥ |G|`.
    pub meshulam: TheoremCheck,
    /// `(‖f‖₁/‖f‖_∞)(Σ_ρ d_ρ ‖f̂(ρ)‖_{S1} / max_ρ ‖f̂(ρ)‖_{S∞}) ≥ |G|`.
    pub kuperberg: TheoremCheck,
}

impl UncertaintyReport {
    pub fn all_satisfied(&self) -> bool {
        self.meshulam.satisfied && self.kuperberg.satisfied && self.donoho_stark.as_ref().is_none_or(|c| c.satisfied)
    }
}

pub fn uncertainty_check(f: &[f64], blocks: &FourierBlocks, tol: f64) -> Result<UncertaintyReport> {
    let order = f.len() as f64;
    let l1: f64 = f.iter().map(|x| x.abs()).sum();
    let linf = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if linf == 0.0 {
        return Err(Error::Numerical("uncertainty checks need a nonzero signal".into()));
    }
    let profile = rank_support_profile(f, blocks, tol);
    let meshulam = TheoremCheck::new((profile.support * profile.weighted_rank) as f64, order);
    let mut s1 = 0.0;
    let mut sinf = 0.0f64;
    for b in &blocks.blocks {
        let sv = singular_values(b);
        s1 += b.nrows() as f64 * sv.iter().sum::<f64>();
        sinf = sinf.max(sv.first().copied().unwrap_or(0.0));
    }
    let kuperberg = TheoremCheck::new((l1 / linf) * (s1 / sinf), order);
    let donoho_stark = blocks.blocks.iter().all(|b| b.nrows() == 1).then(|| {
        let mags: Vec<f64> = blocks.blocks.iter().map(|b| b[(0, 0)].norm()).collect();
        let m1: f64 = mags.iter().sum();
        let minf = mags.iter().fold(0.0f64, |m, &x| m.max(x));
        TheoremCheck::new((l1 / linf) * (m1 / minf), order)
    });
    Ok(UncertaintyReport { donoho_stark, meshulam, kuperberg })
}

/// `(1/‖β̂‖_p) U D^{p−1} V†` blockwise, on the numerical support.
///
/// With `p = 1` the prefactor is dropped, giving the `U V†` part of the
/// nuclear-norm subdifferential.
pub fn canonical_subgradient(beta_hat: &FourierBlocks, p: f64) -> Result<FourierBlocks> {
    let norm = schatten_quasi_norm(beta_hat, p)?;
    if norm == 0.0 {
        return Err(Error::Numerical("zero predictor has no canonical subgradient".into()));
    }
    let smax = global_smax(beta_hat);
    let scale = if p == 1.0 { 1.0 } else { 1.0 / norm };
    Ok(FourierBlocks {
        blocks: beta_hat
            .blocks
            .iter()
            .map(|b| Svd::new(b).recompose(|s| if s > SUPPORT_CUTOFF * smax { scale * s.powf(p - 1.0) } else { 0.0 }))
            .collect(),
    })
}

fn global_smax(b: &FourierBlocks) -> f64 {
    b.blocks.iter().flat_map(singular_values).fold(0.0f64, f64::max)
}

fn subgradient_targets(beta_hat: &FourierBlocks, layers: usize) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let p = 2.0 / layers as f64;
    let c = if layers == 2 { 1.0 } else { 1.0 / schatten_quasi_norm(beta_hat, p)? };
    // Through the SVD rather than an eigen-solve of β̂†β̂: rounding noise on
    // zero eigenvalues would otherwise be amplified by the power p/2 < 1.
    let cut = SUPPORT_CUTOFF.sqrt() * global_smax(beta_hat);
    let mut right = Vec::new();
    let mut left = Vec::new();
    for b in &beta_hat.blocks {
        let svd = Svd::new(b);
        let mut du = svd.u.clone();
        let mut dv = svd.v_t.adjoint();
        for (j, &s) in svd.sigma.iter().enumerate() {
            let w = if s > cut { c * s.powf(p) } else { 0.0 };
            du.column_mut(j).scale_mut(w);
            dv.column_mut(j).scale_mut(w);
        }
        right.push(dv * &svd.v_t);
        left.push(du * svd.u.adjoint());
    }
    Ok((right, left))
}

/// How far `ẑ` is from the subdifferential of the regularizer at `β̂`.
///
/// For `L > 2` (so `p = 2/L < 1`): the larger of the two identities
/// `β̂†ẑ = (1/‖β̂‖_p)(β̂†β̂)^{p/2}` and `ẑβ̂† = (1/‖β̂‖_p)(β̂β̂†)^{p/2}`,
/// measured blockwise in Frobenius norm and divided by the largest
/// right-hand side. For `L = 2`: the larger of the relative gap in
/// `Σ d tr(ẑ†β̂) = ‖β̂‖_{S1}` and the excess of `max ‖ẑ(ρ)‖_{S∞}` over 1.
pub fn subgradient_membership_residual(beta_hat: &FourierBlocks, z_hat: &FourierBlocks, layers: usize) -> Result<f64> {
    if layers < 2 {
        return Err(Error::Config("stationarity residuals need L ≥ 2".into()));
    }
    if beta_hat.dims() != z_hat.dims() {
        return Err(Error::Mismatch("β̂ and ẑ have different block shapes".into()));
    }
    let smax = global_smax(beta_hat);
    if smax == 0.0 {
        return Err(Error::Numerical("zero predictor".into()));
    }
    if layers == 2 {
        let nuc = schatten_quasi_norm(beta_hat, 1.0)?;
        let pairing: f64 = z_hat.inner(beta_hat).re;
        let spec = z_hat.blocks.iter().map(|b| singular_values(b).first().copied().unwrap_or(0.0)).fold(0.0f64, f64::max);
        return Ok(((pairing - nuc).abs() / nuc).max((spec - 1.0).max(0.0)));
    }
    let (right, left) = subgradient_targets(beta_hat, layers)?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (k, (b, z)) in beta_hat.blocks.iter().zip(&z_hat.blocks).enumerate() {
        let r1 = (b.adjoint() * z - &right[k]).norm();
        let r2 = (z * b.adjoint() - &left[k]).norm();
        worst = worst.max(r1).max(r2);
        scale = scale.max(right[k].norm()).max(left[k].norm());
    }
    Ok(worst / scale)
}

/// Dual certificate recovered from a trained predictor.
#[derive(Clone, Debug, Serialize)]
pub struct KktReport {
    /// One multiplier per sample; zero off the active set.
    pub alphas: Vec<f64>,
    pub active: Vec<usize>,
    /// Margin used to normalize `β` (its raw minimum margin).
    pub raw_min_margin: f64,
    /// `‖β̂‖_{2/L}` of the normalized predictor for `L > 2`, and 1 for `L = 2`.
    pub gamma: f64,
    pub subgradient_residual: f64,
    /// For `L = 2`: whether `max ‖ẑ(ρ)‖_{S∞} ≤ 1` (up to 1e-6).
    pub assumption_a2: Option<bool>,
    #[serde(skip)]
    pub z_hat: FourierBlocks,
    #[serde(skip)]
    pub beta_hat: FourierBlocks,
}

/// Options for [`fit_dual_coefficients`].
#[derive(Clone, Copy, Debug)]
pub struct DualFitOptions {
    pub margin_tol: f64,
    /// Rescale `β` so its minimum margin is exactly one.
    pub rescale: bool,
}

impl Default for DualFitOptions {
    fn default() -> Self {
        DualFitOptions { margin_tol: ACTIVE_MARGIN_TOL, rescale: true }
    }
}

/// Fits nonnegative multipliers `α_n` on the active samples so that
/// `ẑ = Σ α_n y_n x̂_n` satisfies the subdifferential identities at `β̂`.
///
/// The fit is a nonnegative least-squares problem on the linear map
/// `ẑ ↦ (β̂†ẑ, ẑβ̂†)` against the right-hand sides of those identities,
/// which avoids the unbounded factor `D^{p−1}` on tiny singular values.
pub fn fit_dual_coefficients(beta: &[f64], data: &Dataset, irreps: &IrrepSet, layers: usize, opts: DualFitOptions) -> Result<KktReport> {
    data.check(irreps.order())?;
    if beta.len() != irreps.order() {
        return Err(Error::Mismatch("β has the wrong length".into()));
    }
    if layers < 2 {
        return Err(Error::Config("stationarity needs L ≥ 2".into()));
    }
    let margins: Vec<f64> = data.inputs.iter().zip(&data.labels).map(|(x, &y)| y * dot(x, beta)).collect();
    let raw_min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    if raw_min.is_nan() || raw_min <= 0.0 {
        return Err(Error::Infeasible(format!("β does not separate the data (min margin {raw_min:.3e})")));
    }
    let s = if opts.rescale { 1.0 / raw_min } else { 1.0 };
    let beta_n: Vec<f64> = beta.iter().map(|v| v * s).collect();
    let beta_hat = irreps.gft(&beta_n)?;
    let p = 2.0 / layers as f64;
    let gamma = if layers == 2 { 1.0 } else { schatten_quasi_norm(&beta_hat, p)? };
    let active: Vec<usize> = (0..data.len()).filter(|&n| margins[n] * s <= 1.0 + opts.margin_tol).collect();
    let mut alphas = vec![0.0; data.len()];
    let dims = beta_hat.dims();
    let mut z_hat = FourierBlocks::zeros(&dims);
    if !active.is_empty() {
        let (right, left) = subgradient_targets(&beta_hat, layers)?;
        let target = stack_pair(&right, &left);
        let cols: Vec<Vec<f64>> = active
            .iter()
            .map(|&n| {
                let xh = irreps.gft(&data.inputs[n])?.scale(data.labels[n]);
                let r: Vec<CMat> = beta_hat.blocks.iter().zip(&xh.blocks).map(|(b, z)| b.adjoint() * z).collect();
                let l: Vec<CMat> = beta_hat.blocks.iter().zip(&xh.blocks).map(|(b, z)| z * b.adjoint()).collect();
                Ok(stack_pair(&r, &l))
            })
            .collect::<Result<_>>()?;
        let a = DMatrix::from_fn(target.len(), cols.len(), |i, j| cols[j][i]);
        let sol = nnls(&a, &DVector::from_vec(target));
        for (k, &n) in active.iter().enumerate() {
            alphas[n] = sol[k];
            if sol[k] != 0.0 {
                z_hat = z_hat.add(&irreps.gft(&data.inputs[n])?.scale(data.labels[n] * sol[k]));
            }
        }
    }
    let residual = subgradient_membership_residual(&beta_hat, &z_hat, layers)?;
    let assumption_a2 = (layers == 2)
        .then(|| z_hat.blocks.iter().map(|b| singular_values(b).first().copied().unwrap_or(0.0)).fold(0.0f64, f64::max) <= 1.0 + 1e-6);
    Ok(KktReport { alphas, active, raw_min_margin: raw_min, gamma, subgradient_residual: residual, assumption_a2, z_hat, beta_hat })
}

/// Flattens two block lists with `√d_ρ` weights into real coordinates.
fn stack_pair(a: &[CMat], b: &[CMat]) -> Vec<f64> {
    let mut out = Vec::new();
    for list in [a, b] {
        for m in list {
            let w = (m.nrows() as f64).sqrt();
            for z in m.iter() {
                out.push(z.re * w);
                out.push(z.im * w);
            }
        }
    }
    out
}

/// Relative residuals of the stationarity recurrences of a linear G-CNN.
#[derive(Clone, Debug, Serialize)]
pub struct RecurrenceReport {
    /// `‖ŵ_ℓ − c·ŵ_{ℓ+1}†⋯ŵ_L† ẑ ŵ₁†⋯ŵ_{ℓ−1}†‖ / ‖ŵ_ℓ‖`, one per layer, with
    /// one scalar `c` fitted across all layers.
    pub layers: Vec<f64>,
    pub layer_scale: f64,
    /// `β̂β̂† = c (ẑβ̂†)^L`.
    pub power_left: f64,
    /// `β̂†β̂ = c (β̂†ẑ)^L`.
    pub power_right: f64,
    /// Anti-Hermitian part of `ẑβ̂†`, relative.
    pub hermitian_left: f64,
    /// Anti-Hermitian part of `β̂†ẑ`, relative.
    pub hermitian_right: f64,
}

impl RecurrenceReport {
    pub fn max(&self) -> f64 {
        self.layers
            .iter()
            .copied()
            .chain([self.power_left, self.power_right, self.hermitian_left, self.hermitian_right])
            .fold(0.0, f64::max)
    }
}

fn wnorm(blocks: &[CMat]) -> f64 {
    blocks.iter().map(|b| b.nrows() as f64 * b.norm_squared()).sum::<f64>().sqrt()
}

fn winner(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.nrows() as f64 * x.dotc(y).re).sum()
}

fn fitted_residual(lhs: &[CMat], rhs: &[CMat]) -> (f64, f64) {
    let rr = winner(rhs, rhs);
    let c = if rr > 0.0 { winner(rhs, lhs) / rr } else { 0.0 };
    let diff: Vec<CMat> = lhs.iter().zip(rhs).map(|(l, r)| l - r * Complex64::new(c, 0.0)).collect();
    let base = wnorm(lhs);
    (if base > 0.0 { wnorm(&diff) / base } else { wnorm(&diff) }, c)
}

/// Evaluates the layer recurrences, the power identities and Hermiticity at
/// a linear G-CNN. Scale factors are fitted, so `ẑ` may be given up to a
/// positive multiple.
pub fn recurrence_residuals(params: &NetworkParams, z_hat: &FourierBlocks, irreps: &IrrepSet) -> Result<RecurrenceReport> {
    if !matches!(params.spec.kind, crate::gcnn::ArchKind::Gcnn | crate::gcnn::ArchKind::Cnn) || params.spec.activation != Activation::Linear
    {
        return Err(Error::WrongVariant("recurrences are defined for linear G-CNNs".into()));
    }
    if params.spec.input_dim != irreps.order() || z_hat.dims() != irreps.dims() {
        return Err(Error::Mismatch("parameters, ẑ and irreps disagree in shape".into()));
    }
    let l = params.spec.layers;
    let w: Vec<FourierBlocks> = params.layers.iter().map(|x| irreps.gft(x)).collect::<Result<_>>()?;
    let k = irreps.len();
    let mut lhs_all = Vec::new();
    let mut rhs_all = Vec::new();
    let mut per_layer = Vec::new();
    for layer in 0..l {
        let mut rhs = Vec::with_capacity(k);
        for b in 0..k {
            let mut m = z_hat.blocks[b].clone();
            for j in (layer + 1..l).rev() {
                m = w[j].blocks[b].adjoint() * m;
            }
            for wj in &w[..layer] {
                m *= wj.blocks[b].adjoint();
            }
            rhs.push(m);
        }
        lhs_all.extend(w[layer].blocks.iter().cloned());
        rhs_all.extend(rhs.iter().cloned());
        per_layer.push((w[layer].blocks.clone(), rhs));
    }
    let (_, c) = fitted_residual(&lhs_all, &rhs_all);
    let layers = per_layer
        .iter()
        .map(|(lhs, rhs)| {
            let diff: Vec<CMat> = lhs.iter().zip(rhs).map(|(a, r)| a - r * Complex64::new(c, 0.0)).collect();
            wnorm(&diff) / wnorm(lhs).max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut beta = FourierBlocks::identities(&irreps.dims());
    for wl in &w {
        beta = wl.mul(&beta);
    }
    let zb: Vec<CMat> = z_hat.blocks.iter().zip(&beta.blocks).map(|(z, b)| z * b.adjoint()).collect();
    let bz: Vec<CMat> = z_hat.blocks.iter().zip(&beta.blocks).map(|(z, b)| b.adjoint() * z).collect();
    let bbt: Vec<CMat> = beta.blocks.iter().map(|b| b * b.adjoint()).collect();
    let btb: Vec<CMat> = beta.blocks.iter().map(|b| b.adjoint() * b).collect();
    let pow = |m: &CMat| (1..l).fold(m.clone(), |acc, _| &acc * m);
    let (power_left, _) = fitted_residual(&bbt, &zb.iter().map(pow).collect::<Vec<_>>());
    let (power_right, _) = fitted_residual(&btb, &bz.iter().map(pow).collect::<Vec<_>>());
    let herm = |ms: &[CMat]| {
        let d: Vec<CMat> = ms.iter().map(|m| m - m.adjoint()).collect();
        wnorm(&d) / wnorm(ms).max(f64::MIN_POSITIVE)
    };
    Ok(RecurrenceReport { layers, layer_scale: c, power_left, power_right, hermitian_left: herm(&zb), hermitian_right: herm(&bz) })
}

/// An exactly stationary linear G-CNN with its data and certificate.
#[derive(Clone, Debug)]
pub struct SyntheticStationaryPoint {
    pub params: NetworkParams,
    pub data: Dataset,
    pub beta: Vec<f64>,
    pub z_hat: FourierBlocks,
    /// Multipliers with `Σ α_n y_n x̂_n = ẑ`.
    pub alphas: Vec<f64>,
}

/// Builds a stationary point in closed form over real irreps.
///
/// Each block of `β̂ = U D V†` is split into balanced factors
/// `ŵ₁ = Q₁ D^{1/L} V†`, `ŵ_ℓ = Q_ℓ D^{1/L} Q_{ℓ−1}†`, `ŵ_L = U D^{1/L} Q_{L−1}†`
/// with random orthogonal `Q_ℓ`; then `ẑ = U D^{2/L−1} V†` makes every layer
/// recurrence exact with unit scale. The first block is left at zero and
/// one block is rank-deficient so support handling is exercised. Data: two
/// active samples whose sum is parallel to `ẑ` and one inactive sample at
/// margin 2.
pub fn synthetic_stationary_point(irreps: &IrrepSet, layers: usize, seed: u64) -> Result<SyntheticStationaryPoint> {
    if !irreps.is_real(1e-12) {
        return Err(Error::WrongVariant("the synthetic construction needs real irreps".into()));
    }
    if layers < 2 {
        return Err(Error::Config("need L ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = irreps.dims();
    let p = 2.0 / layers as f64;
    let mut w_blocks: Vec<Vec<CMat>> = vec![Vec::new(); layers];
    let mut z_blocks = Vec::new();
    let mut beta_blocks = Vec::new();
    let mut deficient_done = false;
    for (b, &d) in dims.iter().enumerate() {
        let rank = if b == 0 {
            0
        } else if d > 1 && !deficient_done {
            deficient_done = true;
            d - 1
        } else {
            d
        };
        let u = random_orthogonal(d, &mut rng);
        let v = random_orthogonal(d, &mut rng);
        let sig: Vec<f64> = (0..d).map(|i| if i < rank { rng.random_range(0.5..2.0) } else { 0.0 }).collect();
        let diag = |f: &dyn Fn(f64) -> f64| DMatrix::from_fn(d, d, |i, j| if i == j && sig[i] > 0.0 { f(sig[i]) } else { 0.0 });
        let droot = diag(&|s| s.powf(1.0 / layers as f64));
        let qs: Vec<DMatrix<f64>> = (0..layers - 1).map(|_| random_orthogonal(d, &mut rng)).collect();
        for layer in 0..layers {
            let left = if layer == layers - 1 { &u } else { &qs[layer] };
            let right_t = if layer == 0 { v.transpose() } else { qs[layer - 1].transpose() };
            w_blocks[layer].push(to_c(&(left * &droot * right_t)));
        }
        z_blocks.push(to_c(&(&u * diag(&|s| s.powf(p - 1.0)) * v.transpose())));
        beta_blocks.push(to_c(&(&u * diag(&|s| s) * v.transpose())));
    }
    let z_hat = FourierBlocks { blocks: z_blocks };
    let beta_hat = FourierBlocks { blocks: beta_blocks };
    let wl: Vec<Vec<f64>> = w_blocks.into_iter().map(|bl| irreps.igft_real(&FourierBlocks { blocks: bl })).collect::<Result<_>>()?;
    let spec = ArchitectureSpec::gcnn(irreps.group().clone(), layers, Activation::Linear);
    let params = NetworkParams::new(spec, wl, seed)?;
    let beta = params.linearize()?;
    let z = irreps.igft_real(&z_hat)?;
    let kappa = dot(&z, &beta);
    let zb = irreps.igft_real(&beta_hat)?;
    debug_assert!(zb.iter().zip(&beta).all(|(a, b)| (a - b).abs() < 1e-9));
    let mut delta: Vec<f64> = (0..beta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bb = dot(&beta, &beta);
    let proj = dot(&delta, &beta) / bb;
    for (d, b) in delta.iter_mut().zip(&beta) {
        *d -= proj * b;
    }
    let dn = dot(&delta, &delta).sqrt();
    let zn = dot(&z, &z).sqrt() / kappa;
    for d in &mut delta {
        *d *= 0.5 * zn / dn;
    }
    let x1: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a / kappa + d).collect();
    let x2: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a / kappa - d).collect();
    let x3: Vec<f64> = beta.iter().map(|b| 2.0 * b / bb).collect();
    let data = Dataset::new(vec![x1, x2, x3], vec![1.0, 1.0, 1.0])?;
    Ok(SyntheticStationaryPoint { params, data, beta, z_hat, alphas: vec![kappa / 2.0, kappa / 2.0, 0.0] })
}

fn to_c(m: &DMatrix<f64>) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            if r[(i, i)] < 0.0 {
                -1.0
            } else {
                1.0
            }
        } else {
            0.0
        }
    });
    q * signs
}

/// Output of [`min_schatten_baseline`].
#[derive(Clone, Debug, Serialize)]
pub struct BaselineResult {
    /// Best feasible point of the nuclear (p = 1) relaxation.
    pub beta_nuclear: Vec<f64>,
    pub nuclear_value: f64,
    /// Quasi-norm with the requested `p` at the nuclear solution.
    pub nuclear_solution_p_value: f64,
    /// Locally refined minimizer for `p < 1` (equal to the nuclear solution
    /// when `p = 1`).
    pub beta_refined: Vec<f64>,
    pub refined_value: f64,
    pub p: f64,
    pub min_margin: f64,
}

/// Exact Euclidean projection onto `{β : y_n⟨x_n, β⟩ ≥ 1}`, solved through
/// its nonnegative dual.
pub struct MarginPolytope {
    a: DMatrix<f64>,
    a_pinv_b: DVector<f64>,
    a_pinv_a: DMatrix<f64>,
}

impl MarginPolytope {
    pub fn new(data: &Dataset) -> MarginPolytope {
        let a = DMatrix::from_fn(data.len(), data.dim(), |i, j| data.labels[i] * data.inputs[i][j]);
        MarginPolytope::from_rows(a)
    }

    /// `{β : Aβ ≥ 1}` for an explicit constraint matrix.
    pub fn from_rows(a: DMatrix<f64>) -> MarginPolytope {
        let (n, dim) = a.shape();
        let ones = DVector::from_element(n, 1.0);
        let a_pinv_b = least_squares(&a, &ones);
        let pinv = a.clone().pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(dim, n));
        let a_pinv_a = &pinv * &a;
        MarginPolytope { a, a_pinv_b, a_pinv_a }
    }

    pub fn margins(&self, beta: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(beta)).iter().copied().collect()
    }

    pub fn min_margin(&self, beta: &[f64]) -> f64 {
        self.margins(beta).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `argmin_{Aβ ≥ 1} ‖β − v‖`: `β = v + Aᵀλ` with `λ ≥ 0` solving
    /// `min ½‖Aᵀλ − A⁺(1 − Av)‖²`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let vv = DVector::from_column_slice(v);
        let d = &self.a_pinv_b - &self.a_pinv_a * &vv;
        let lambda = nnls(&self.a.transpose(), &d);
        (vv + self.a.transpose() * lambda).iter().copied().collect()
    }
}

/// Minimum-norm interpolating predictor for the Fourier regularizer.
///
/// The convex phase runs projected subgradient descent on the
/// `d_ρ`-weighted nuclear norm with step `c/√t` and exact projections onto
/// the margin polytope. For `p < 1` the nuclear solution and a few random
/// feasible points seed an iteratively reweighted refinement of the
/// quasi-norm; the best value found is reported. Values are always taken at
/// feasible points rescaled to minimum margin exactly one.
pub fn min_schatten_baseline(data: &Dataset, irreps: &IrrepSet, p: f64, iters: usize, seed: u64) -> Result<BaselineResult> {
    data.check(irreps.order())?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("baseline exponent must lie in (0, 1], got {p}")));
    }
    let poly = MarginPolytope::new(data);
    let n = irreps.order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = poly.project(&vec![0.0; n]);
    if poly.min_margin(&start) < 1.0 - 1e-6 {
        return Err(Error::Infeasible("no predictor attains margin 1 on every sample".into()));
    }
    let normalized = |beta: &[f64]| -> Option<Vec<f64>> {
        let m = poly.min_margin(beta);
        (m > 0.0).then(|| beta.iter().map(|v| v / m).collect())
    };
    let value_of = |beta: &[f64], q: f64| -> Result<f64> { schatten_quasi_norm(&irreps.gft(beta)?, q) };
    let jitter = 1e-3 * crate::linalg::norm2(&start) / (n as f64).sqrt();
    let mut beta: Vec<f64> = start.iter().map(|v| v + jitter * rng.random_range(-1.0..1.0)).collect();
    beta = poly.project(&beta);
    let step0 = 0.5 * crate::linalg::norm2(&start);
    let mut best = normalized(&start).expect("feasible start");
    let mut best_val = value_of(&best, 1.0)?;
    for t in 1..=iters {
        let blocks = irreps.gft(&beta)?;
        let g = subgradient_direction(irreps, &blocks, |_| 1.0)?;
        let gn = crate::linalg::norm2(&g);
        if gn == 0.0 {
            break;
        }
        let step = step0 / (t as f64).sqrt() / gn;
        let moved: Vec<f64> = beta.iter().zip(&g).map(|(b, gi)| b - step * gi).collect();
        beta = poly.project(&moved);
        if let Some(cand) = normalized(&beta) {
            let v = value_of(&cand, 1.0)?;
            if v < best_val {
                best_val = v;
                best = cand;
            }
        }
    }
    let beta_nuclear = best;
    let nuclear_value = best_val;
    let nuclear_solution_p_value = value_of(&beta_nuclear, p)?;
    let (beta_refined, refined_value) = if p < 1.0 {
        let rows = DMatrix::from_fn(data.len(), n, |i, j| data.labels[i] * data.inputs[i][j]);
        let rounds = (iters / 20).clamp(20, 200);
        let mut starts = vec![beta_nuclear.clone()];
        for _ in 0..BASELINE_RESTARTS {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            starts.push(poly.project(&v));
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in &starts {
            for eps0 in IRLS_SMOOTHING_STARTS {
                let cand = irls_refine(&rows, irreps, s, p, eps0, rounds)?;
                if best.as_ref().is_none_or(|b| cand.1 < b.1) {
                    best = Some(cand);
                }
            }
        }
        best.expect("at least one start")
    } else {
        (beta_nuclear.clone(), nuclear_value)
    };
    let min_margin = poly.min_margin(&beta_refined);
    Ok(BaselineResult { beta_nuclear, nuclear_value, nuclear_solution_p_value, beta_refined, refined_value, p, min_margin })
}

/// Real-space gradient of `Σ_ρ d_ρ Σ_i φ(σ_{ρ,i})` where `weight(σ) = φ'(σ)`:
/// `|G| · Re igft(U φ'(D) V†)`.
fn subgradient_direction(irreps: &IrrepSet, blocks: &FourierBlocks, weight: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let smax = global_smax(blocks);
    let g = FourierBlocks {
        blocks: blocks.blocks.iter().map(|b| Svd::new(b).recompose(|s| if s > SUPPORT_CUTOFF * smax { weight(s) } else { 0.0 })).collect(),
    };
    let n = irreps.order() as f64;
    Ok(irreps.igft_real(&g)?.into_iter().map(|v| v * n).collect())
}

/// Random feasible restarts used by the `p < 1` refinement, besides the
/// nuclear solution.
pub const BASELINE_RESTARTS: usize = 4;
/// Initial smoothing `ε / σ_max` for each refinement run; large values
/// forget the start, small ones stay near it.
pub const IRLS_SMOOTHING_STARTS: [f64; 3] = [1.0, 0.1, 0.01];

/// Iteratively reweighted least squares for `Σ_ρ d_ρ tr((β̂β̂†)^{p/2})`.
///
/// Each round minimizes the convex majorant `Σ_ρ d_ρ tr(W_ρ β̂_ρβ̂_ρ†)` with
/// `W_ρ = (β̂β̂† + ε²)^{(p−2)/2}` exactly over the margin polytope (a
/// Cholesky change of variables turns it into a Euclidean projection),
/// then shrinks `ε`.
fn irls_refine(poly_rows: &DMatrix<f64>, irreps: &IrrepSet, start: &[f64], p: f64, eps0: f64, rounds: usize) -> Result<(Vec<f64>, f64)> {
    let n = irreps.order();
    let value_of = |beta: &[f64]| -> Result<f64> { schatten_quasi_norm(&irreps.gft(beta)?, p) };
    let mats: Vec<Vec<CMat>> = (0..irreps.len()).map(|k| (0..n).map(|u| irreps.matrix(k, u)).collect()).collect();
    let mut beta = start.to_vec();
    let mut best = start.to_vec();
    let mut best_val = value_of(start)?;
    let mut eps = eps0 * global_smax(&irreps.gft(start)?);
    let eps_min = 1e-9 * eps;
    for _ in 0..rounds {
        let blocks = irreps.gft(&beta)?;
        let rows: usize = irreps.dims().iter().map(|d| d * d).sum();
        let mut psi = CMat::zeros(rows, n);
        let mut off = 0;
        for (k, b) in blocks.blocks.iter().enumerate() {
            let d = b.nrows();
            let reg = b * b.adjoint() + CMat::identity(d, d) * Complex64::new(eps * eps, 0.0);
            let half = crate::linalg::psd_power(&reg, (p - 2.0) / 4.0) * Complex64::new((d as f64).sqrt(), 0.0);
            for (u, m) in mats[k].iter().enumerate() {
                let col = &half * m;
                for (i, z) in col.iter().enumerate() {
                    psi[(off + i, u)] = *z;
                }
            }
            off += d * d;
        }
        let q = (psi.adjoint() * &psi).map(|z| z.re);
        let q = (&q + q.transpose()) * 0.5;
        let Some(chol) = q.cholesky() else { break };
        let l = chol.l();
        // A β with β = L⁻ᵀ γ: rows of A L⁻ᵀ are (L⁻¹ Aᵀ)ᵀ.
        let Some(lt_inv_at) = l.solve_lower_triangular(&poly_rows.transpose()) else { break };
        let poly = MarginPolytope::from_rows(lt_inv_at.transpose());
        let gamma = poly.project(&vec![0.0; n]);
        let Some(b) = l.transpose().solve_upper_triangular(&DVector::from_vec(gamma)) else { break };
        beta = b.iter().copied().collect();
        let m = (poly_rows * DVector::from_column_slice(&beta)).min();
        if m > 0.0 {
            let cand: Vec<f64> = beta.iter().map(|v| v / m).collect();
            let v = value_of(&cand)?;
            if v < best_val {
                best_val = v;
                best = cand;
            }
        }
        eps = (eps * 0.5).max(eps_min);
    }
    Ok((best, best_val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{cyclic_irreps, dihedral_irreps, dihedral_irreps_real};

    fn blocks(diag: &[f64]) -> FourierBlocks {
        FourierBlocks { blocks: diag.iter().map(|&v| CMat::from_element(1, 1, Complex64::new(v, 0.0))).collect() }
    }

    #[test]
    fn schatten_examples() {
        assert!((schatten_quasi_norm(&blocks(&[-3.5]), 0.4).unwrap() - 3.5).abs() < 1e-12);
        assert!((schatten_quasi_norm(&blocks(&[3.0, 4.0]), 2.0).unwrap() - 5.0).abs() < 1e-12);
        let b = blocks(&[1.0, -2.0, 0.5]);
        let vec_norm = real_quasi_norm(&[1.0, -2.0, 0.5], 2.0 / 3.0);
        assert!((schatten_quasi_norm(&b, 2.0 / 3.0).unwrap() - vec_norm).abs() < 1e-12);
        assert!(schatten_quasi_norm(&b, 0.0).is_err());
    }

    #[test]
    fn regularizer_forms_agree() {
        let s = dihedral_irreps(8).unwrap();
        let b = s.gft(&[0.3, -1.0, 2.0, 0.1, 0.0, 0.7, -0.4, 1.1]).unwrap();
        for l in 2..6 {
            let a = fourier_regularizer(&b, l).unwrap();
            let c = schatten_quasi_norm(&b, 2.0 / l as f64).unwrap();
            assert!((a - c).abs() < 1e-10 * c);
        }
    }

    #[test]
    fn real_norm_examples() {
        assert_eq!(real_quasi_norm(&[1.0, 0.0, 0.0], 0.5), 1.0);
        assert_eq!(real_quasi_norm(&[1.0; 4], 1.0), 4.0);
        assert!((real_quasi_norm(&[1.0; 3], 2.0 / 3.0) - 27f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_support_examples() {
        let s = dihedral_irreps(8).unwrap();
        let mut delta = vec![0.0; 8];
        delta[0] = 1.0;
        let p = rank_support_profile(&delta, &s.gft(&delta).unwrap(), RANK_TOL);
        assert_eq!(p.support, 1);
        assert_eq!(p.ranks, s.dims());
        let ones = vec![1.0; 8];
        let p = rank_support_profile(&ones, &s.gft(&ones).unwrap(), RANK_TOL);
        assert_eq!(p.support, 8);
        assert_eq!(p.ranks, vec![1, 0, 0, 0, 0]);
        let zero = vec![0.0; 8];
        let p = rank_support_profile(&zero, &s.gft(&zero).unwrap(), RANK_TOL);
        assert_eq!((p.support, p.weighted_rank), (0, 0));
    }

    #[test]
    fn uncertainty_equality_cases() {
        let s = dihedral_irreps(8).unwrap();
        let mut delta = vec![0.0; 8];
        delta[0] = 1.0;
        let r = uncertainty_check(&delta, &s.gft(&delta).unwrap(), RANK_TOL).unwrap();
        assert_eq!(r.meshulam.lhs, 8.0);
        assert!(r.all_satisfied() && r.donoho_stark.is_none());
        let c = cyclic_irreps(6).unwrap();
        let ones = vec![1.0; 6];
        let r = uncertainty_check(&ones, &c.gft(&ones).unwrap(), RANK_TOL).unwrap();
        assert_eq!(r.meshulam.lhs, 6.0);
        assert!(r.donoho_stark.unwrap().satisfied);
        assert!(uncertainty_check(&[0.0; 6], &c.gft(&[0.0; 6]).unwrap(), RANK_TOL).is_err());
    }

    #[test]
    fn canonical_element_has_zero_residual() {
        let s = dihedral_irreps(8).unwrap();
        let b = s.gft(&[0.3, -1.0, 2.0, 0.1, 0.0, 0.7, -0.4, 1.1]).unwrap();
        for l in [3, 4] {
            let z = canonical_subgradient(&b, 2.0 / l as f64).unwrap();
            assert!(subgradient_membership_residual(&b, &z, l).unwrap() < 1e-10);
            let zero = FourierBlocks::zeros(&b.dims());
            assert!((subgradient_membership_residual(&b, &zero, l).unwrap() - 1.0).abs() < 1e-12);
        }
        let z = canonical_subgradient(&b, 1.0).unwrap();
        assert!(subgradient_membership_residual(&b, &z, 2).unwrap() < 1e-10);
    }

    #[test]
    fn scalar_residual_matches_vector_subgradient() {
        // For scalar blocks the identity reads conj(a) z = |a|^p / N.
        let a: [f64; 3] = [2.0, -0.5, 1.5];
        let b = blocks(&a);
        let p = 2.0 / 3.0;
        let nrm = real_quasi_norm(&a, p);
        let z = blocks(&a.map(|v: f64| v.signum() * v.abs().powf(p - 1.0) / nrm));
        assert!(subgradient_membership_residual(&b, &z, 3).unwrap() < 1e-12);
        let wrong = blocks(&a.map(|v: f64| -v.signum() * v.abs().powf(p - 1.0) / nrm));
        assert!(subgradient_membership_residual(&b, &wrong, 3).unwrap() > 1.0);
    }

    #[test]
    fn single_active_sample_proportional_to_subgradient() {
        let s = dihedral_irreps(6).unwrap();
        let beta = [0.4, -1.0, 0.3, 0.8, 0.1, -0.6];
        let bh = s.gft(&beta).unwrap();
        let z = canonical_subgradient(&bh, 2.0 / 3.0).unwrap();
        let x = s.igft_real(&z).unwrap();
        let m = dot(&x, &beta);
        let data = Dataset::new(vec![x.iter().map(|v| v / m).collect()], vec![1.0]).unwrap();
        let rep = fit_dual_coefficients(&beta, &data, &s, 3, DualFitOptions::default()).unwrap();
        assert_eq!(rep.active, vec![0]);
        assert!(rep.subgradient_residual < 1e-9, "{}", rep.subgradient_residual);
        assert!(rep.alphas[0] > 0.0);
    }

    #[test]
    fn all_inactive_gives_zero_multipliers() {
        let s = dihedral_irreps(6).unwrap();
        let beta = [0.4, -1.0, 0.3, 0.8, 0.1, -0.6];
        let x: Vec<f64> = beta.iter().map(|b| 5.0 * b).collect();
        let data = Dataset::new(vec![x], vec![1.0]).unwrap();
        let opts = DualFitOptions { rescale: false, ..DualFitOptions::default() };
        let rep = fit_dual_coefficients(&beta, &data, &s, 3, opts).unwrap();
        assert!(rep.active.is_empty() && rep.alphas == vec![0.0]);
        assert!((rep.subgradient_residual - 1.0).abs() < 1e-12);
        let bad = Dataset::new(vec![beta.to_vec()], vec![-1.0]).unwrap();
        assert!(matches!(fit_dual_coefficients(&beta, &bad, &s, 3, DualFitOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn synthetic_point_is_stationary() {
        let s = dihedral_irreps_real(6).unwrap();
        for l in [2, 3, 4] {
            let sp = synthetic_stationary_point(&s, l, 11).unwrap();
            let rec = recurrence_residuals(&sp.params, &sp.z_hat, &s).unwrap();
            assert!(rec.max() < 1e-9, "L={l}: {rec:?}");
            let rep = fit_dual_coefficients(&sp.beta, &sp.data, &s, l, DualFitOptions::default()).unwrap();
            assert_eq!(rep.active, vec![0, 1]);
            assert!(rep.subgradient_residual < 1e-9, "L={l}: {}", rep.subgradient_residual);
        }
    }

    #[test]
    fn random_params_are_not_stationary() {
        let s = dihedral_irreps(6).unwrap();
        let spec = ArchitectureSpec::gcnn(s.group().clone(), 3, Activation::Linear);
        let p = crate::gcnn::init_network(&spec, 4, 1.0).unwrap();
        let z = FourierBlocks { blocks: s.gft(&[1.0, 0.2, -0.3, 0.5, 0.0, 0.9]).unwrap().blocks };
        assert!(recurrence_residuals(&p, &z, &s).unwrap().max() > 0.05);
    }

    #[test]
    fn c2_nuclear_baseline_is_two() {
        let s = cyclic_irreps(2).unwrap();
        let data = Dataset::new(vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let r = min_schatten_baseline(&data, &s, 1.0, 500, 0).unwrap();
        assert!((r.nuclear_value - 2.0).abs() < 1e-3, "{}", r.nuclear_value);
        assert!(r.min_margin >= 1.0 - 1e-6);
    }

    #[test]
    fn refinement_never_worsens_the_quasi_norm() {
        let s = dihedral_irreps(6).unwrap();
        let data = Dataset::new(vec![vec![1.0, -2.0, 0.5, 0.0, 1.5, -1.0], vec![0.2, 0.1, -0.3, 1.0, 0.0, 0.4]], vec![1.0, -1.0]).unwrap();
        let r = min_schatten_baseline(&data, &s, 2.0 / 3.0, 400, 0).unwrap();
        assert!(r.min_margin >= 1.0 - 1e-6);
        assert!(r.refined_value <= r.nuclear_solution_p_value + 1e-12);
        let infeasible = Dataset::new(vec![vec![1.0; 6], vec![1.0; 6]], vec![1.0, -1.0]).unwrap();
        assert!(matches!(min_schatten_baseline(&infeasible, &s, 1.0, 10, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn projection_is_exact() {
        let data = Dataset::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]], vec![1.0, -1.0]).unwrap();
        let poly = MarginPolytope::new(&data);
        let b = poly.project(&[0.0, 0.0, 0.0]);
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] + 0.5).abs() < 1e-12 && (b[2] + 0.5).abs() < 1e-12);
        let inside = [2.0, -3.0, 0.0];
        assert!(poly.project(&inside).iter().zip(inside).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
