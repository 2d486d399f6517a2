//! Unitary irreducible representations, the group Fourier transform and
//! group cross-correlation.
//!
//! Conventions:
//!
//! * analysis is unnormalized, `f̂(ρ) = Σ_u f(u) ρ(u)`;
//! * synthesis carries the `1/|G|`, `f(u) = (1/|G|) Σ_ρ d_ρ tr(f̂(ρ) ρ(u)†)`;
//! * the unitary basis matrix `F` has row `(ρ, i, j)` equal to
//!   `√(d_ρ/|G|) ρ(·)_{ij}`, rows of one irrep in column-major order.
//!
//! Irreps of a direct product are Kronecker products of the factors' irreps
//! and are never materialized: transforms recurse over the factors.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{self, Factor, GroupTable};
use crate::linalg::{cis, max_abs, CMat, ONE, ZERO};

/// Default largest order handled by [`decompose_regular_representation`].
pub const DECOMPOSE_CAP: usize = 512;
/// Largest order for which [`fourier_basis`] materializes `F`.
pub const DENSE_BASIS_CAP: usize = 4096;
/// Eigenvalue clustering tolerance (relative to the spectral radius).
pub const CLUSTER_TOL: f64 = 1e-8;
/// Character comparison tolerance when deduplicating copies.
pub const CHARACTER_TOL: f64 = 1e-6;
/// Seeds tried before the numerical decomposition gives up.
pub const DECOMPOSE_RETRIES: u64 = 5;

/// One unitary irrep, stored as `|G|` column-major `d × d` blocks.
#[derive(Clone, Debug)]
pub struct Irrep {
    dim: usize,
    data: Vec<Complex64>,
    name: String,
}

impl Irrep {
    /// Builds an irrep from one matrix per group element (no checks).
    pub fn from_matrices(name: impl Into<String>, matrices: &[CMat]) -> Irrep {
        let dim = matrices.first().map_or(1, |m| m.nrows());
        let mut data = Vec::with_capacity(matrices.len() * dim * dim);
        for m in matrices {
            data.extend(m.iter().copied());
        }
        Irrep { dim, data, name: name.into() }
    }

    fn scalar(name: impl Into<String>, values: Vec<Complex64>) -> Irrep {
        Irrep { dim: 1, data: values, name: name.into() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    fn slice(&self, u: usize) -> &[Complex64] {
        let d2 = self.dim * self.dim;
        &self.data[u * d2..(u + 1) * d2]
    }

    pub fn matrix(&self, u: usize) -> CMat {
        CMat::from_column_slice(self.dim, self.dim, self.slice(u))
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Explicit(Vec<Irrep>),
    Product(Box<IrrepSet>, Box<IrrepSet>),
}

/// A complete set of unitary irreps of one group.
#[derive(Clone, Debug)]
pub struct IrrepSet {
    group: Arc<GroupTable>,
    kind: Kind,
}

/// Outcome of [`IrrepSet::verify`].
#[derive(Clone, Debug, Serialize)]
pub struct IrrepReport {
    pub dims: Vec<usize>,
    pub sum_dim_sq: usize,
    pub order: usize,
    pub complete: bool,
    pub homomorphism_error: f64,
    pub unitarity_error: f64,
    pub schur_error: f64,
    pub min_character_distance: f64,
}

impl IrrepReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.complete
            && self.homomorphism_error <= tol
            && self.unitarity_error <= tol
            && self.schur_error <= tol
            && self.min_character_distance > CHARACTER_TOL
    }
}

impl IrrepSet {
    /// Wraps explicit irreps, checking dimensions and completeness.
    pub fn from_irreps(group: Arc<GroupTable>, irreps: Vec<Irrep>) -> Result<IrrepSet> {
        let n = group.order();
        for ir in &irreps {
            if ir.data.len() != n * ir.dim * ir.dim {
                return Err(Error::Mismatch(format!("irrep '{}' does not have one matrix per element of a group of order {n}", ir.name)));
            }
        }
        let s: usize = irreps.iter().map(|r| r.dim * r.dim).sum();
        if s != n {
            return Err(Error::Validation(format!("incomplete irrep set: Σd² = {s} but |G| = {n}")));
        }
        Ok(IrrepSet { group, kind: Kind::Explicit(irreps) })
    }

    pub fn group(&self) -> &Arc<GroupTable> {
        &self.group
    }

    pub fn order(&self) -> usize {
        self.group.order()
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            Kind::Explicit(v) => v.len(),
            Kind::Product(a, b) => a.len() * b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match &self.kind {
            Kind::Explicit(v) => v.iter().map(|r| r.dim).collect(),
            Kind::Product(a, b) => {
                let (da, db) = (a.dims(), b.dims());
                da.iter().flat_map(|x| db.iter().map(move |y| x * y)).collect()
            }
        }
    }

    pub fn dim(&self, k: usize) -> usize {
        match &self.kind {
            Kind::Explicit(v) => v[k].dim,
            Kind::Product(a, b) => a.dim(k / b.len()) * b.dim(k % b.len()),
        }
    }

    pub fn name(&self, k: usize) -> String {
        match &self.kind {
            Kind::Explicit(v) => v[k].name.clone(),
            Kind::Product(a, b) => format!("{}⊗{}", a.name(k / b.len()), b.name(k % b.len())),
        }
    }

    /// `ρ_k(g_u)`.
    pub fn matrix(&self, k: usize, u: usize) -> CMat {
        match &self.kind {
            Kind::Explicit(v) => v[k].matrix(u),
            Kind::Product(a, b) => {
                let nb = b.order();
                a.matrix(k / b.len(), u / nb).kronecker(&b.matrix(k % b.len(), u % nb))
            }
        }
    }

    /// `χ_k(g_u) = tr ρ_k(g_u)`.
    pub fn character(&self, k: usize, u: usize) -> Complex64 {
        match &self.kind {
            Kind::Explicit(v) => {
                let d = v[k].dim;
                let s = v[k].slice(u);
                (0..d).map(|i| s[i * d + i]).sum()
            }
            Kind::Product(a, b) => {
                let nb = b.order();
                a.character(k / b.len(), u / nb) * b.character(k % b.len(), u % nb)
            }
        }
    }

    /// Whether every matrix entry is real (within `tol`).
    pub fn is_real(&self, tol: f64) -> bool {
        match &self.kind {
            Kind::Explicit(v) => v.iter().all(|r| r.data.iter().all(|z| z.im.abs() <= tol)),
            Kind::Product(a, b) => a.is_real(tol) && b.is_real(tol),
        }
    }

    /// Index of the trivial irrep.
    pub fn trivial_index(&self) -> Option<usize> {
        let n = self.order();
        (0..self.len()).find(|&k| self.dim(k) == 1 && (0..n).all(|u| (self.character(k, u) - ONE).norm() < 1e-9))
    }

    /// Every irrep as an explicit list of matrices.
    pub fn to_explicit(&self) -> IrrepSet {
        match &self.kind {
            Kind::Explicit(_) => self.clone(),
            Kind::Product(..) => {
                let n = self.order();
                let irreps = (0..self.len())
                    .map(|k| {
                        let mats: Vec<CMat> = (0..n).map(|u| self.matrix(k, u)).collect();
                        Irrep::from_matrices(self.name(k), &mats)
                    })
                    .collect();
                IrrepSet { group: self.group.clone(), kind: Kind::Explicit(irreps) }
            }
        }
    }

    /// The set `ρ_k ↦ U_k ρ_k U_k†` for the given unitaries.
    pub fn conjugated(&self, unitaries: &[CMat]) -> Result<IrrepSet> {
        if unitaries.len() != self.len() {
            return Err(Error::Mismatch("one unitary per irrep is required".into()));
        }
        let n = self.order();
        let irreps = (0..self.len())
            .map(|k| {
                let uk = &unitaries[k];
                let mats: Vec<CMat> = (0..n).map(|u| uk * self.matrix(k, u) * uk.adjoint()).collect();
                Irrep::from_matrices(self.name(k), &mats)
            })
            .collect();
        Ok(IrrepSet { group: self.group.clone(), kind: Kind::Explicit(irreps) })
    }

    /// Checks completeness, homomorphism, unitarity, Schur orthogonality and
    /// pairwise distinct characters.
    pub fn verify(&self) -> IrrepReport {
        let g = &*self.group;
        let n = g.order();
        let dims = self.dims();
        let sum_dim_sq: usize = dims.iter().map(|d| d * d).sum();
        let mats: Vec<Vec<CMat>> = (0..self.len()).map(|k| (0..n).map(|u| self.matrix(k, u)).collect()).collect();
        let mut hom = 0.0f64;
        let mut unit = 0.0f64;
        for m in &mats {
            let d = m[0].nrows();
            unit = unit.max(max_abs(&(&m[g.identity()] - CMat::identity(d, d))));
            for u in 0..n {
                unit = unit.max(max_abs(&(&m[u] * m[u].adjoint() - CMat::identity(d, d))));
                for v in 0..n {
                    hom = hom.max(max_abs(&(&m[u] * &m[v] - &m[g.mul(u, v)])));
                }
            }
        }
        let schur = if sum_dim_sq == n { unitarity_defect(&self.basis_rows_matrix()) } else { f64::INFINITY };
        let chars: Vec<Vec<Complex64>> = (0..self.len()).map(|k| (0..n).map(|u| self.character(k, u)).collect()).collect();
        let mut min_dist = f64::INFINITY;
        for a in 0..chars.len() {
            for b in 0..a {
                let dist = chars[a].iter().zip(&chars[b]).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        IrrepReport {
            dims,
            sum_dim_sq,
            order: n,
            complete: sum_dim_sq == n,
            homomorphism_error: hom,
            unitarity_error: unit,
            schur_error: schur,
            min_character_distance: min_dist,
        }
    }

    /// Row bookkeeping `(ρ, i, j)` of the basis matrix, column-major per irrep.
    pub fn basis_rows(&self) -> Vec<(usize, usize, usize)> {
        let mut rows = Vec::with_capacity(self.order());
        for k in 0..self.len() {
            let d = self.dim(k);
            for j in 0..d {
                for i in 0..d {
                    rows.push((k, i, j));
                }
            }
        }
        rows
    }

    fn basis_rows_matrix(&self) -> CMat {
        let n = self.order();
        let rows = self.basis_rows();
        let mut f = CMat::zeros(rows.len(), n);
        for u in 0..n {
            let mut r = 0;
            for k in 0..self.len() {
                let d = self.dim(k);
                let m = self.matrix(k, u);
                let s = (d as f64 / n as f64).sqrt();
                for j in 0..d {
                    for i in 0..d {
                        f[(r, u)] = m[(i, j)] * s;
                        r += 1;
                    }
                }
            }
        }
        f
    }

    /// Group Fourier transform of a real signal.
    pub fn gft(&self, f: &[f64]) -> Result<FourierBlocks> {
        self.check_len(f.len())?;
        let fc: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Ok(FourierBlocks { blocks: self.gft_scalar(&fc) })
    }

    /// Group Fourier transform of a complex signal.
    pub fn gft_complex(&self, f: &[Complex64]) -> Result<FourierBlocks> {
        self.check_len(f.len())?;
        Ok(FourierBlocks { blocks: self.gft_scalar(f) })
    }

    /// Inverse transform; returns a complex signal.
    pub fn igft(&self, blocks: &FourierBlocks) -> Result<Vec<Complex64>> {
        self.check_blocks(blocks)?;
        match &self.kind {
            Kind::Explicit(irreps) => Ok(igft_explicit_scalar(irreps, &blocks.blocks, self.order())),
            Kind::Product(..) => {
                let out = self.igft_mv(&blocks.blocks, 1);
                Ok(out.into_iter().map(|m| m[(0, 0)]).collect())
            }
        }
    }

    /// Inverse transform keeping the real part.
    pub fn igft_real(&self, blocks: &FourierBlocks) -> Result<Vec<f64>> {
        Ok(self.igft(blocks)?.into_iter().map(|z| z.re).collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.order() {
            return Err(Error::Mismatch(format!("signal has length {len} but the group has order {}", self.order())));
        }
        Ok(())
    }

    fn check_blocks(&self, b: &FourierBlocks) -> Result<()> {
        let dims = self.dims();
        if b.blocks.len() != dims.len() || b.blocks.iter().zip(&dims).any(|(m, &d)| m.nrows() != d || m.ncols() != d) {
            return Err(Error::Mismatch("block shapes do not match the irrep dimensions".into()));
        }
        Ok(())
    }

    fn gft_scalar(&self, f: &[Complex64]) -> Vec<CMat> {
        match &self.kind {
            Kind::Explicit(irreps) => irreps
                .iter()
                .map(|ir| {
                    let d2 = ir.dim * ir.dim;
                    let mut acc = vec![ZERO; d2];
                    for (u, &fu) in f.iter().enumerate() {
                        if fu == ZERO {
                            continue;
                        }
                        for (a, &m) in acc.iter_mut().zip(ir.slice(u)) {
                            *a += fu * m;
                        }
                    }
                    CMat::from_column_slice(ir.dim, ir.dim, &acc)
                })
                .collect(),
            Kind::Product(..) => {
                let mv: Vec<CMat> = f.iter().map(|&z| CMat::from_element(1, 1, z)).collect();
                self.gft_mv(&mv)
            }
        }
    }

    /// `X_k = Σ_u ρ_k(u) ⊗ F(u)` for a matrix-valued `F`.
    fn gft_mv(&self, f: &[CMat]) -> Vec<CMat> {
        match &self.kind {
            Kind::Explicit(irreps) => irreps
                .iter()
                .map(|ir| {
                    let m = f[0].nrows();
                    let mut acc = CMat::zeros(ir.dim * m, ir.dim * m);
                    for (u, fu) in f.iter().enumerate() {
                        let r = ir.slice(u);
                        for j in 0..ir.dim {
                            for i in 0..ir.dim {
                                let c = r[j * ir.dim + i];
                                if c == ZERO {
                                    continue;
                                }
                                let mut view = acc.view_mut((i * m, j * m), (m, m));
                                view += fu * c;
                            }
                        }
                    }
                    acc
                })
                .collect(),
            Kind::Product(a, b) => {
                let nb = b.order();
                let inner: Vec<Vec<CMat>> = (0..a.order()).map(|ua| b.gft_mv(&f[ua * nb..(ua + 1) * nb])).collect();
                let mut out = vec![CMat::zeros(0, 0); a.len() * b.len()];
                for kb in 0..b.len() {
                    let column: Vec<CMat> = inner.iter().map(|h| h[kb].clone()).collect();
                    for (ka, x) in a.gft_mv(&column).into_iter().enumerate() {
                        out[ka * b.len() + kb] = x;
                    }
                }
                out
            }
        }
    }

    /// Inverse of [`Self::gft_mv`]: `F(u) = (1/|G|) Σ_k d_k tr_ρ[X_k (ρ_k(u)† ⊗ I_m)]`.
    fn igft_mv(&self, x: &[CMat], m: usize) -> Vec<CMat> {
        let n = self.order();
        match &self.kind {
            Kind::Explicit(irreps) => (0..n)
                .map(|u| {
                    let mut out = CMat::zeros(m, m);
                    for (ir, xk) in irreps.iter().zip(x) {
                        let d = ir.dim;
                        let r = ir.slice(u);
                        let w = d as f64 / n as f64;
                        for i in 0..d {
                            for j in 0..d {
                                // conj(ρ(u)_{ij}) multiplies block (i, j).
                                let c = r[j * d + i].conj() * w;
                                if c == ZERO {
                                    continue;
                                }
                                out += xk.view((i * m, j * m), (m, m)) * c;
                            }
                        }
                    }
                    out
                })
                .collect(),
            Kind::Product(a, b) => {
                let (na, nb) = (a.order(), b.order());
                let db = b.dims();
                // Left partial inverse for each right irrep: Z_kb(ua).
                let mut z: Vec<Vec<CMat>> = vec![Vec::with_capacity(b.len()); na];
                for kb in 0..b.len() {
                    let column: Vec<CMat> = (0..a.len()).map(|ka| x[ka * b.len() + kb].clone()).collect();
                    for (ua, zk) in a.igft_mv(&column, db[kb] * m).into_iter().enumerate() {
                        z[ua].push(zk);
                    }
                }
                let mut out = Vec::with_capacity(n);
                for zu in &z {
                    out.extend(b.igft_mv(zu, m));
                }
                debug_assert_eq!(out.len(), na * nb);
                out
            }
        }
    }

    /// JSON form: dims plus every matrix as nested `[re, im]` pairs.
    pub fn to_json(&self) -> IrrepSetJson {
        let n = self.order();
        IrrepSetJson {
            dims: self.dims(),
            names: (0..self.len()).map(|k| self.name(k)).collect(),
            matrices: (0..self.len())
                .map(|k| {
                    (0..n)
                        .map(|u| {
                            let m = self.matrix(k, u);
                            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

fn igft_explicit_scalar(irreps: &[Irrep], x: &[CMat], n: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n];
    for (ir, xk) in irreps.iter().zip(x) {
        let d = ir.dim;
        let w = d as f64 / n as f64;
        for (u, o) in out.iter_mut().enumerate() {
            let r = ir.slice(u);
            let mut t = ZERO;
            for i in 0..d {
                for j in 0..d {
                    t += xk[(i, j)] * r[j * d + i].conj();
                }
            }
            *o += t * w;
        }
    }
    out
}

/// Serialized irrep set.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrrepSetJson {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub names: Vec<String>,
    /// `matrices[irrep][element][row][col] = [re, im]`.
    pub matrices: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

impl IrrepSetJson {
    pub fn into_irreps(self, group: Arc<GroupTable>) -> Result<IrrepSet> {
        let mut irreps = Vec::with_capacity(self.dims.len());
        for (k, per_elem) in self.matrices.iter().enumerate() {
            let d = *self.dims.get(k).ok_or_else(|| Error::Mismatch("fewer dims than irreps".into()))?;
            let mut mats = Vec::with_capacity(per_elem.len());
            for rows in per_elem {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Mismatch(format!("irrep {k} has a matrix that is not {d}×{d}")));
                }
                mats.push(CMat::from_fn(d, d, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])));
            }
            let name = self.names.get(k).cloned().unwrap_or_else(|| format!("ρ{}", k + 1));
            irreps.push(Irrep::from_matrices(name, &mats));
        }
        IrrepSet::from_irreps(group, irreps)
    }
}

/// Blockwise Fourier transform, one `d_ρ × d_ρ` matrix per irrep.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierBlocks {
    pub blocks: Vec<CMat>,
}

impl FourierBlocks {
    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn zeros(dims: &[usize]) -> FourierBlocks {
        FourierBlocks { blocks: dims.iter().map(|&d| CMat::zeros(d, d)).collect() }
    }

    pub fn identities(dims: &[usize]) -> FourierBlocks {
        FourierBlocks { blocks: dims.iter().map(|&d| CMat::identity(d, d)).collect() }
    }

    /// `⟨A, B⟩_M = Σ_ρ d_ρ tr(A_ρ B_ρ†)`.
    pub fn inner(&self, other: &FourierBlocks) -> Complex64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dotc(b).conj() * a.nrows() as f64).sum()
    }

    /// Blockwise product `A_ρ B_ρ`.
    pub fn mul(&self, other: &FourierBlocks) -> FourierBlocks {
        FourierBlocks { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a * b).collect() }
    }

    pub fn adjoint(&self) -> FourierBlocks {
        FourierBlocks { blocks: self.blocks.iter().map(|a| a.adjoint()).collect() }
    }

    pub fn scale(&self, s: f64) -> FourierBlocks {
        FourierBlocks { blocks: self.blocks.iter().map(|a| a * Complex64::new(s, 0.0)).collect() }
    }

    pub fn sub(&self, other: &FourierBlocks) -> FourierBlocks {
        FourierBlocks { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect() }
    }

    pub fn add(&self, other: &FourierBlocks) -> FourierBlocks {
        FourierBlocks { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b).collect() }
    }

    /// Largest entrywise difference.
    pub fn max_diff(&self, other: &FourierBlocks) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| max_abs(&(a - b))).fold(0.0, f64::max)
    }

    /// `sqrt(Σ d_ρ ‖A_ρ‖_F²)`.
    pub fn weighted_frobenius(&self) -> f64 {
        self.blocks.iter().map(|a| a.nrows() as f64 * a.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> FourierBlocksJson {
        FourierBlocksJson {
            dims: self.dims(),
            blocks: self
                .blocks
                .iter()
                .map(|m| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect())
                .collect(),
        }
    }
}

/// Serialized Fourier blocks: `blocks[ρ][row][col] = [re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierBlocksJson {
    pub dims: Vec<usize>,
    pub blocks: Vec<Vec<Vec<[f64; 2]>>>,
}

impl FourierBlocksJson {
    pub fn into_blocks(self) -> Result<FourierBlocks> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (rows, &d) in self.blocks.iter().zip(&self.dims) {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Mismatch(format!("block is not {d}×{d}")));
            }
            blocks.push(CMat::from_fn(d, d, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])));
        }
        Ok(FourierBlocks { blocks })
    }
}

fn unitarity_defect(f: &CMat) -> f64 {
    let n = f.nrows();
    max_abs(&(f * f.adjoint() - CMat::identity(n, n)))
}

/// The unitary Fourier basis matrix, dense when small enough.
#[derive(Clone, Debug)]
pub struct FourierBasis {
    irreps: IrrepSet,
    dense: Option<CMat>,
    rows: Vec<(usize, usize, usize)>,
}

impl FourierBasis {
    pub fn matrix(&self) -> Option<&CMat> {
        self.dense.as_ref()
    }

    pub fn rows(&self) -> &[(usize, usize, usize)] {
        &self.rows
    }

    pub fn irreps(&self) -> &IrrepSet {
        &self.irreps
    }

    /// `F x`, computed through the blockwise transform.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let blocks = self.irreps.gft_complex(x)?;
        let n = self.irreps.order() as f64;
        Ok(self.rows.iter().map(|&(k, i, j)| blocks.blocks[k][(i, j)] * (blocks.blocks[k].nrows() as f64 / n).sqrt()).collect())
    }

    /// `F† y`.
    pub fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.irreps.order() as f64;
        let mut blocks = FourierBlocks::zeros(&self.irreps.dims());
        for (&(k, i, j), &v) in self.rows.iter().zip(y) {
            let d = blocks.blocks[k].nrows() as f64;
            blocks.blocks[k][(i, j)] = v * (n / d).sqrt();
        }
        self.irreps.igft(&blocks)
    }

    /// `‖F F† − I‖_max`, or `None` when `F` was not materialized.
    pub fn unitarity_error(&self) -> Option<f64> {
        self.dense.as_ref().map(unitarity_defect)
    }
}

/// Builds `F`, materializing it when `|G| ≤ DENSE_BASIS_CAP`.
pub fn fourier_basis(irreps: &IrrepSet) -> Result<FourierBasis> {
    let n = irreps.order();
    let s: usize = irreps.dims().iter().map(|d| d * d).sum();
    if s != n {
        return Err(Error::Validation(format!("incomplete irrep set: Σd² = {s} but |G| = {n}")));
    }
    let dense = (n <= DENSE_BASIS_CAP).then(|| irreps.basis_rows_matrix());
    Ok(FourierBasis { irreps: irreps.clone(), dense, rows: irreps.basis_rows() })
}

/// One-dimensional DFT irreps of `C_n`: irrep `k` sends `a ↦ ω^{ka}`,
/// `ω = e^{−2πi/n}`.
pub fn cyclic_irreps(n: usize) -> Result<IrrepSet> {
    let g = Arc::new(group::cyclic_group(n)?);
    let irreps = (0..n)
        .map(|k| {
            let vals = (0..n).map(|a| cis(-2.0 * std::f64::consts::PI * ((k * a) % n) as f64 / n as f64)).collect();
            Irrep::scalar(format!("χ{k}"), vals)
        })
        .collect();
    IrrepSet::from_irreps(g, irreps)
}

/// Irreps of a group built from cyclic factors.
pub fn abelian_irreps(g: &Arc<GroupTable>) -> Result<IrrepSet> {
    if !g.is_abelian() || !g.factors().iter().all(|f| matches!(f, Factor::Cyclic(_))) {
        return Err(Error::WrongVariant("abelian_irreps needs a product of cyclic groups".into()));
    }
    builtin_irreps(g)
}

/// Dihedral irreps in complex form: the 2-dimensional ones send
/// `r ↦ diag(ω^m, ω^{−m})`, `a ↦ [[0,1],[1,0]]`, `ω = e^{2πi/k}`.
pub fn dihedral_irreps(n: usize) -> Result<IrrepSet> {
    dihedral_impl(n, false)
}

/// Dihedral irreps in real orthogonal form: `r ↦` rotation by `2πm/k`,
/// `a ↦ diag(1, −1)`. Unitarily equivalent to [`dihedral_irreps`].
pub fn dihedral_irreps_real(n: usize) -> Result<IrrepSet> {
    dihedral_impl(n, true)
}

fn dihedral_impl(n: usize, real: bool) -> Result<IrrepSet> {
    let g = Arc::new(group::dihedral_group(n)?);
    let k = n / 2;
    let r1 = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Complex64> { (0..n).map(|x| Complex64::new(f(x / k, x % k), 0.0)).collect() };
    let mut irreps = vec![Irrep::scalar("trivial", r1(&|_, _| 1.0)), Irrep::scalar("sign", r1(&|s, _| if s == 0 { 1.0 } else { -1.0 }))];
    if k % 2 == 0 {
        let alt = |i: usize| if i % 2 == 0 { 1.0 } else { -1.0 };
        irreps.push(Irrep::scalar("alt", r1(&|_, i| alt(i))));
        irreps.push(Irrep::scalar("alt·sign", r1(&|s, i| alt(i) * if s == 0 { 1.0 } else { -1.0 })));
    }
    let top = if k % 2 == 0 { (k.max(2) - 2) / 2 } else { (k - 1) / 2 };
    for m in 1..=top {
        let theta = 2.0 * std::f64::consts::PI * m as f64 / k as f64;
        let mats: Vec<CMat> = (0..n)
            .map(|x| {
                let (s, i) = (x / k, x % k);
                let rot = if real {
                    let (c, sn) = ((theta * i as f64).cos(), (theta * i as f64).sin());
                    CMat::from_row_slice(2, 2, &[ONE * c, ONE * -sn, ONE * sn, ONE * c])
                } else {
                    CMat::from_row_slice(2, 2, &[cis(theta * i as f64), ZERO, ZERO, cis(-theta * i as f64)])
                };
                if s == 0 {
                    rot
                } else {
                    let a = if real {
                        CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
                    } else {
                        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
                    };
                    a * rot
                }
            })
            .collect();
        irreps.push(Irrep::from_matrices(format!("ρ{m}"), &mats));
    }
    IrrepSet::from_irreps(g, irreps)
}

/// Irreps of the quaternion group: four characters and the 2-dimensional
/// representation `i ↦ diag(i, −i)`, `j ↦ [[0,1],[−1,0]]`.
pub fn quaternion_irreps() -> IrrepSet {
    let g = Arc::new(group::quaternion_group());
    let i_ = Complex64::new(0.0, 1.0);
    let unit2 = [
        CMat::identity(2, 2),
        CMat::from_row_slice(2, 2, &[i_, ZERO, ZERO, -i_]),
        CMat::from_row_slice(2, 2, &[ZERO, ONE, -ONE, ZERO]),
        CMat::from_row_slice(2, 2, &[ZERO, i_, i_, ZERO]),
    ];
    // Character values on the units 1, i, j, k.
    let chars = [[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
    let names = ["trivial", "χi", "χj", "χk"];
    let mut irreps: Vec<Irrep> =
        chars.iter().zip(names).map(|(c, name)| Irrep::scalar(name, (0..8).map(|x| Complex64::new(c[x / 2], 0.0)).collect())).collect();
    let mats: Vec<CMat> = (0..8).map(|x| if x % 2 == 0 { unit2[x / 2].clone() } else { -unit2[x / 2].clone() }).collect();
    irreps.push(Irrep::from_matrices("ρ", &mats));
    IrrepSet::from_irreps(g, irreps).expect("quaternion irreps are complete")
}

/// Irreps of `A × B` as all Kronecker products `ρ_A ⊗ ρ_B`, ordered with the
/// `B` index fastest.
pub fn product_irreps(a: &IrrepSet, b: &IrrepSet) -> Result<IrrepSet> {
    for s in [a, b] {
        let sq: usize = s.dims().iter().map(|d| d * d).sum();
        if sq != s.order() {
            return Err(Error::Validation("product_irreps needs complete inputs".into()));
        }
    }
    let g = Arc::new(group::direct_product(a.group(), b.group())?);
    Ok(IrrepSet { group: g, kind: Kind::Product(Box::new(a.clone()), Box::new(b.clone())) })
}

/// Closed-form irreps for groups built from the built-in families, with the
/// numerical decomposition as fallback for table factors.
pub fn builtin_irreps(g: &Arc<GroupTable>) -> Result<IrrepSet> {
    builtin_with(g, false)
}

/// Real orthogonal irreps for products of dihedral groups and `C₁`, `C₂`
/// (the groups whose irreps can all be taken real in closed form here).
pub fn builtin_irreps_real(g: &Arc<GroupTable>) -> Result<IrrepSet> {
    builtin_with(g, true)
}

fn builtin_with(g: &Arc<GroupTable>, real: bool) -> Result<IrrepSet> {
    let factors = g.factors();
    let single = factors.len() == 1;
    let mut acc: Option<IrrepSet> = None;
    for f in factors {
        let s = match *f {
            Factor::Cyclic(n) if real && n > 2 => return Err(Error::WrongVariant(format!("C{n} has no real closed-form irreps"))),
            Factor::Cyclic(n) => cyclic_irreps(n)?,
            Factor::Dihedral(n) if real => dihedral_irreps_real(n)?,
            Factor::Dihedral(n) => dihedral_irreps(n)?,
            Factor::Quaternion if real => return Err(Error::WrongVariant("Q8 has no real 2-dimensional irrep".into())),
            Factor::Quaternion => quaternion_irreps(),
            Factor::Table(_) if single && !real => return decompose_regular_representation(g, 0),
            Factor::Table(_) => return Err(Error::WrongVariant("products with table factors need explicitly supplied irreps".into())),
        };
        acc = Some(match acc {
            None => s,
            Some(prev) => product_irreps(&prev, &s)?,
        });
    }
    let mut set = acc.ok_or_else(|| Error::Mismatch("group has no factor metadata".into()))?;
    if *set.group != **g {
        return Err(Error::Mismatch("group table does not match its factor metadata".into()));
    }
    set.group = g.clone();
    Ok(set)
}

/// Numerically decomposes the regular representation into irreps.
///
/// A seeded random Hermitian matrix is averaged over the group into the
/// commutant; each eigenspace of the average carries one irreducible copy.
/// Copies are deduplicated by character and each irrep must appear exactly
/// `d_ρ` times.
pub fn decompose_regular_representation(g: &Arc<GroupTable>, seed: u64) -> Result<IrrepSet> {
    decompose_with_cap(g, seed, DECOMPOSE_CAP)
}

pub fn decompose_with_cap(g: &Arc<GroupTable>, seed: u64, cap: usize) -> Result<IrrepSet> {
    let n = g.order();
    if n > cap {
        return Err(Error::Resource(format!("order {n} exceeds the decomposition cap {cap}")));
    }
    let mut last = String::new();
    for attempt in 0..DECOMPOSE_RETRIES {
        match decompose_once(g, seed.wrapping_add(attempt)) {
            Ok(set) => return Ok(set),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Numerical(format!("regular representation decomposition failed after {DECOMPOSE_RETRIES} seeds: {last}")))
}

fn decompose_once(g: &Arc<GroupTable>, seed: u64) -> Result<IrrepSet> {
    let n = g.order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = if i == j { 0.0 } else { StandardNormal.sample(&mut rng) };
            h[(i, j)] = Complex64::new(re, im);
            h[(j, i)] = Complex64::new(re, -im);
        }
    }
    // H̄[x][y] = c(x⁻¹y) with c(t) = (1/|G|) Σ_z H[z][z t].
    let c: Vec<Complex64> = (0..n).map(|t| (0..n).map(|z| h[(z, g.mul(z, t))]).sum::<Complex64>() / n as f64).collect();
    let hbar = CMat::from_fn(n, n, |x, y| c[g.mul(g.inv(x), y)]);
    let eig = hbar.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match clusters.last_mut() {
            Some(cl) if (eig.eigenvalues[i] - eig.eigenvalues[*cl.last().unwrap()]).abs() <= CLUSTER_TOL * scale => cl.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    let mut found: Vec<(Irrep, Vec<Complex64>, usize)> = Vec::new();
    for cl in &clusters {
        let d = cl.len();
        let q = eig.eigenvectors.select_columns(cl);
        let mats: Vec<CMat> = (0..n)
            .map(|u| {
                // (L(u) Q)[x] = Q[u⁻¹ x].
                let lq = CMat::from_fn(n, d, |x, j| q[(g.mul(g.inv(u), x), j)]);
                q.adjoint() * lq
            })
            .collect();
        let chi: Vec<Complex64> = mats.iter().map(|m| m.trace()).collect();
        let norm = chi.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!("eigenspace of dimension {d} is reducible (‖χ‖² = {norm:.6})")));
        }
        if let Some(entry) = found
            .iter_mut()
            .find(|(_, c, _)| c.iter().zip(&chi).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() < CHARACTER_TOL * n as f64)
        {
            entry.2 += 1;
        } else {
            found.push((Irrep::from_matrices("", &mats), chi, 1));
        }
    }
    for (ir, _, copies) in &found {
        if *copies != ir.dim {
            return Err(Error::Numerical(format!("irrep of dimension {} appeared {copies} times in the regular representation", ir.dim)));
        }
    }
    let mut irreps: Vec<(Irrep, Vec<Complex64>)> = found.into_iter().map(|(i, c, _)| (i, c)).collect();
    let is_trivial = |c: &[Complex64]| c.iter().all(|z| (z - ONE).norm() < 1e-8);
    irreps.sort_by_key(|(ir, c)| (!is_trivial(c), ir.dim));
    let irreps = irreps
        .into_iter()
        .enumerate()
        .map(|(k, (mut ir, _))| {
            ir.name = format!("ρ{}", k + 1);
            ir
        })
        .collect();
    let set = IrrepSet::from_irreps(g.clone(), irreps)?;
    let rep = set.verify();
    if !rep.passes(1e-8) {
        return Err(Error::Numerical(format!("decomposed irreps failed verification: {rep:?}")));
    }
    Ok(set)
}

/// Group cross-correlation `(a ⋆ h)(u) = Σ_v a(uv) h(v)`.
pub fn cross_correlate(g: &GroupTable, a: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let n = g.order();
    if a.len() != n || h.len() != n {
        return Err(Error::Mismatch("signals must have length |G|".into()));
    }
    let mut out = vec![0.0; n];
    correlate_into(g, a, h, &mut out);
    Ok(out)
}

/// Unchecked kernel behind [`cross_correlate`].
#[inline]
pub(crate) fn correlate_into(g: &GroupTable, a: &[f64], h: &[f64], out: &mut [f64]) {
    for (u, o) in out.iter_mut().enumerate() {
        let row = g.row(u);
        let mut s = 0.0;
        for (&t, &hv) in row.iter().zip(h) {
            s += a[t as usize] * hv;
        }
        *o = s;
    }
}

/// `f⁻(u) = f(u⁻¹)`.
pub fn involution(g: &GroupTable, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != g.order() {
        return Err(Error::Mismatch("signal must have length |G|".into()));
    }
    Ok((0..g.order()).map(|u| f[g.inv(u)]).collect())
}

/// Random unitary `d × d` matrix (QR of a complex Gaussian matrix).
pub fn random_unitary(d: usize, rng: &mut impl rand::Rng) -> CMat {
    let m = CMat::from_fn(d, d, |_, _| Complex64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng)));
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column phases so the distribution is Haar.
    let phases = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            let x = r[(i, i)];
            if x.norm() > 0.0 {
                x / x.norm()
            } else {
                ONE
            }
        } else {
            ZERO
        }
    });
    q * phases
}
