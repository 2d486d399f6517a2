//! Datasets: Gaussian and Fourier-sparse generators, IDX (MNIST) parsing,
//! and lifting of square images to signals on translations ⋊ D₈.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{rank_support_profile, RANK_TOL};
use crate::error::{Error, Result};
use crate::gcnn::Dataset;
use crate::group::{group_from_permutations, GroupTable};
use crate::linalg::{dot, norm2};
use crate::repr::{FourierBlocks, IrrepSet};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const LABEL_RETRIES: usize = 100;

/// A row-major grayscale image, values normally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<ImageGrid> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Mismatch(format!("{height}×{width} grid cannot hold {} pixels", pixels.len())));
        }
        Ok(ImageGrid { height, width, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Average pooling over non-overlapping `k × k` windows.
    pub fn downsample(&self, k: usize) -> Result<ImageGrid> {
        if k == 0 || self.height % k != 0 || self.width % k != 0 {
            return Err(Error::Mismatch(format!("{}×{} is not divisible into {k}×{k} windows", self.height, self.width)));
        }
        let (h, w) = (self.height / k, self.width / k);
        let norm = (k * k) as f64;
        let pixels = (0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                let mut s = 0.0;
                for dr in 0..k {
                    for dc in 0..k {
                        s += self.get(r * k + dr, c * k + dc);
                    }
                }
                s / norm
            })
            .collect();
        ImageGrid::new(h, w, pixels)
    }
}

/// Contents of one IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    Images(Vec<ImageGrid>),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse { offset: bytes.len(), message: format!("header truncated, need bytes up to {}", offset + 4) })
}

/// Parses an uncompressed IDX stream. Image bytes are scaled to `[0, 1]`.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32(bytes, 0)?;
    let (dims, header) = match magic {
        IDX_IMAGES => (3, 16),
        IDX_LABELS => (1, 8),
        other => return Err(Error::Parse { offset: 0, message: format!("unsupported IDX magic {other:#010x}") }),
    };
    let mut shape = Vec::with_capacity(dims);
    for k in 0..dims {
        shape.push(read_u32(bytes, 4 + 4 * k)? as usize);
    }
    let payload = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse { offset: 4, message: "dimension product overflows".into() })?;
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload truncated: expected {needed} bytes, found {}", bytes.len()),
        });
    }
    let body = &bytes[header..needed];
    if magic == IDX_LABELS {
        return Ok(IdxData::Labels(body.to_vec()));
    }
    let (rows, cols) = (shape[1], shape[2]);
    if rows == 0 || cols == 0 {
        return Err(Error::Parse { offset: 8, message: "zero image dimension".into() });
    }
    let images = body
        .chunks_exact(rows * cols)
        .map(|px| ImageGrid { height: rows, width: cols, pixels: px.iter().map(|&b| b as f64 / 255.0).collect() })
        .collect();
    Ok(IdxData::Images(images))
}

/// Writes images as an IDX stream, quantizing pixels to bytes.
pub fn write_idx_images<W: Write>(mut w: W, images: &[ImageGrid]) -> Result<()> {
    let (rows, cols) = images.first().map_or((0, 0), |i| (i.height, i.width));
    if images.iter().any(|i| i.height != rows || i.width != cols) {
        return Err(Error::Mismatch("images differ in size".into()));
    }
    for v in [IDX_IMAGES, images.len() as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    for img in images {
        let bytes: Vec<u8> = img.pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<()> {
    w.write_all(&IDX_LABELS.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Reads paired image/label IDX files and keeps the first `count` images
/// whose digit is `positive` (label +1) or `negative` (label −1).
pub fn load_mnist_binary(images: &Path, labels: &Path, positive: u8, negative: u8, count: usize) -> Result<(Vec<ImageGrid>, Vec<f64>)> {
    let imgs = match parse_idx(&std::fs::read(images)?)? {
        IdxData::Images(v) => v,
        IdxData::Labels(_) => return Err(Error::Config(format!("{} holds labels, not images", images.display()))),
    };
    let labs = match parse_idx(&std::fs::read(labels)?)? {
        IdxData::Labels(v) => v,
        IdxData::Images(_) => return Err(Error::Config(format!("{} holds images, not labels", labels.display()))),
    };
    if imgs.len() != labs.len() {
        return Err(Error::Mismatch(format!("{} images but {} labels", imgs.len(), labs.len())));
    }
    let mut out_i = Vec::new();
    let mut out_l = Vec::new();
    for (img, &l) in imgs.into_iter().zip(&labs) {
        if out_i.len() == count {
            break;
        }
        let y = if l == positive {
            1.0
        } else if l == negative {
            -1.0
        } else {
            continue;
        };
        out_i.push(img);
        out_l.push(y);
    }
    if out_i.len() < count {
        return Err(Error::Resource(format!("only {} images of digits {positive}/{negative} available, {count} requested", out_i.len())));
    }
    Ok((out_i, out_l))
}

/// Labels drawn from a random linear rule, with the rule and the margin
/// actually achieved.
#[derive(Clone, Debug)]
pub struct LabelRule {
    pub labels: Vec<f64>,
    pub beta: Vec<f64>,
    /// `min_n |⟨x_n, β⟩| / (‖β‖ ‖x_n‖)`.
    pub achieved_margin: f64,
}

fn relative_margin(inputs: &[Vec<f64>], beta: &[f64]) -> f64 {
    let nb = norm2(beta);
    inputs.iter().map(|x| dot(x, beta).abs() / (nb * norm2(x)).max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min)
}

/// Labels `y_n = sign⟨x_n, β⟩` for a Gaussian `β`, redrawing `β` until the
/// relative margin reaches `margin_min`; after the retry budget the best
/// draw is kept and its margin reported.
pub fn make_separable_labels(inputs: &[Vec<f64>], seed: u64, margin_min: f64) -> LabelRule {
    let dim = inputs.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..LABEL_RETRIES {
        let beta: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let m = relative_margin(inputs, &beta);
        if best.as_ref().is_none_or(|(_, bm)| m > *bm) {
            best = Some((beta, m));
        }
        if m >= margin_min {
            break;
        }
    }
    let (beta, achieved_margin) = best.unwrap_or_default();
    let labels = inputs.iter().map(|x| if dot(x, &beta) >= 0.0 { 1.0 } else { -1.0 }).collect();
    LabelRule { labels, beta, achieved_margin }
}

/// `n` signals on `g` with i.i.d. standard normal entries, labelled by
/// [`make_separable_labels`] with a seed derived from `seed`.
pub fn gaussian_dataset(g: &GroupTable, n: usize, seed: u64) -> Result<(Dataset, LabelRule)> {
    if n == 0 {
        return Err(Error::Config("dataset needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..g.order()).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let rule = make_separable_labels(&inputs, seed ^ 0x9e37_79b9_7f4a_7c15, 0.0);
    Ok((Dataset::new(inputs, rule.labels.clone())?, rule))
}

/// Gaussian inputs labelled by a ground truth `β` whose Fourier transform
/// lives on `active_blocks`.
///
/// `β` is the real part of the inverse transform of random blocks, so the
/// active set must be closed under complex conjugation of irreps; this is
/// checked through the rank profile of the result. Samples with relative
/// margin below `margin_min` are redrawn.
pub fn fourier_sparse_dataset(
    irreps: &IrrepSet,
    active_blocks: &[usize],
    n: usize,
    seed: u64,
    margin_min: f64,
) -> Result<(Dataset, Vec<f64>)> {
    let k = irreps.len();
    if n == 0 || active_blocks.is_empty() || active_blocks.iter().any(|&b| b >= k) {
        return Err(Error::Config(format!("active blocks must be nonempty indices below {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = irreps.dims();
    let mut hat = FourierBlocks::zeros(&dims);
    for &b in active_blocks {
        hat.blocks[b] = hat.blocks[b].map(|_| num_complex::Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    }
    let beta: Vec<f64> = irreps.igft(&hat)?.into_iter().map(|z| z.re).collect();
    let check = rank_support_profile(&beta, &irreps.gft(&beta)?, RANK_TOL);
    if let Some(b) = (0..k).find(|b| check.ranks[*b] > 0 && !active_blocks.contains(b)) {
        return Err(Error::Config(format!("active set is not closed under conjugation: block {b} appears in the real part")));
    }
    let nb = norm2(&beta);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let budget = 1000 * n;
    let mut tries = 0;
    while inputs.len() < n {
        tries += 1;
        if tries > budget {
            return Err(Error::Numerical(format!("could not draw {n} samples with relative margin {margin_min}")));
        }
        let x: Vec<f64> = (0..irreps.order()).map(|_| rng.sample(StandardNormal)).collect();
        let m = dot(&x, &beta);
        if m.abs() >= margin_min * nb * norm2(&x) {
            labels.push(m.signum());
            inputs.push(x);
        }
    }
    Ok((Dataset::new(inputs, labels)?, beta))
}

/// How a translation ⋊ D₈ element moves the pixels of an `n × n` grid.
///
/// Elements are indexed `(i·n + j)·8 + b` where `(i, j)` is a cyclic
/// translation of (row, column) and `b` indexes D₈ as `r^b` for `b < 4`
/// and `a·r^{b−4}` otherwise, matching the element order of
/// `cyclic:n*cyclic:n*dihedral:8`. The point group acts about the grid
/// center with `r : (row, col) ↦ (col, n−1−row)` and
/// `a : (row, col) ↦ (row, n−1−col)`; element `(τ, d)` sends pixel `q` to
/// `d(q) + τ`. Composition of these maps is the semidirect product, so the
/// action group differs from the direct product used for the network.
#[derive(Clone, Debug)]
pub struct LiftSpec {
    pub side: usize,
    pub filter: ImageGrid,
    pub filter_seed: u64,
    perms: Vec<Vec<u32>>,
}

impl LiftSpec {
    /// A lift with a seeded standard normal filter.
    pub fn new(side: usize, filter_seed: u64) -> Result<LiftSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(filter_seed);
        let px = (0..side * side).map(|_| rng.sample(StandardNormal)).collect();
        let filter = ImageGrid::new(side, side, px)?;
        LiftSpec::with_filter(filter, filter_seed)
    }

    pub fn with_filter(filter: ImageGrid, filter_seed: u64) -> Result<LiftSpec> {
        if filter.height != filter.width {
            return Err(Error::Mismatch("the lift needs a square grid".into()));
        }
        let n = filter.height;
        let point: Vec<Vec<usize>> = (0..8).map(|b| point_perm(n, b)).collect();
        let mut perms = Vec::with_capacity(n * n * 8);
        for i in 0..n {
            for j in 0..n {
                for d in &point {
                    perms.push(
                        d.iter()
                            .map(|&q| {
                                let (r, c) = (q / n, q % n);
                                (((r + i) % n) * n + (c + j) % n) as u32
                            })
                            .collect(),
                    );
                }
            }
        }
        Ok(LiftSpec { side: n, filter, filter_seed, perms })
    }

    pub fn group_order(&self) -> usize {
        self.perms.len()
    }

    /// Pixel index `g · p`.
    pub fn action(&self, g: usize, p: usize) -> usize {
        self.perms[g][p] as usize
    }

    /// The group generated by the pixel action (translations ⋊ D₈).
    pub fn action_group(&self) -> Result<GroupTable> {
        let perms: Vec<Vec<usize>> = self.perms.iter().map(|p| p.iter().map(|&v| v as usize).collect()).collect();
        group_from_permutations(&perms, None)
    }

    /// `x(g) = Σ_p img(g·p) filter(p)`.
    pub fn lift(&self, img: &ImageGrid) -> Result<Vec<f64>> {
        if img.height != self.side || img.width != self.side {
            return Err(Error::Mismatch(format!("image is {}×{}, lift expects {}×{}", img.height, img.width, self.side, self.side)));
        }
        Ok(self.perms.iter().map(|perm| perm.iter().zip(&self.filter.pixels).map(|(&q, f)| img.pixels[q as usize] * f).sum()).collect())
    }

    /// Transforms an image by a group element: `(g·img)(q) = img(g⁻¹·q)`.
    pub fn transform_image(&self, g: usize, img: &ImageGrid) -> ImageGrid {
        let mut out = vec![0.0; img.pixels.len()];
        for (p, &v) in img.pixels.iter().enumerate() {
            out[self.perms[g][p] as usize] = v;
        }
        ImageGrid { height: img.height, width: img.width, pixels: out }
    }
}

/// D₈ element `b` as a pixel permutation on an `n × n` grid.
fn point_perm(n: usize, b: usize) -> Vec<usize> {
    let rot = |q: usize| {
        let (r, c) = (q / n, q % n);
        c * n + (n - 1 - r)
    };
    let refl = |q: usize| {
        let (r, c) = (q / n, q % n);
        r * n + (n - 1 - c)
    };
    (0..n * n)
        .map(|q| {
            let mut v = q;
            for _ in 0..b % 4 {
                v = rot(v);
            }
            if b >= 4 {
                v = refl(v);
            }
            v
        })
        .collect()
}

/// Lifts every image, keeping labels.
pub fn lift_dataset(images: &[ImageGrid], labels: &[f64], lift: &LiftSpec) -> Result<Dataset> {
    let inputs = images.iter().map(|i| lift.lift(i)).collect::<Result<Vec<_>>>()?;
    Dataset::new(inputs, labels.to_vec())
}

/// Writes a dataset as CSV: `label, x0, x1, …`.
pub fn write_dataset_csv<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend((0..data.dim()).map(|i| format!("x{i}")));
    wr.write_record(&header)?;
    for (x, y) in data.inputs.iter().zip(&data.labels) {
        let mut rec = vec![y.to_string()];
        rec.extend(x.iter().map(f64::to_string));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads the layout written by [`write_dataset_csv`].
pub fn read_dataset_csv<R: std::io::Read>(r: R) -> Result<Dataset> {
    let mut rd = csv::Reader::from_reader(r);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Config(format!("dataset row {}: {e}", row + 1)))?;
        let (y, x) = vals.split_first().ok_or_else(|| Error::Config(format!("dataset row {} is empty", row + 1)))?;
        labels.push(*y);
        inputs.push(x.to_vec());
    }
    Dataset::new(inputs, labels)
}
