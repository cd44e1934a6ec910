use serde::{Deserialize, Serialize};

use super::{CompressError, Result};
use crate::linalg::{least_squares, LinalgError, Matrix};

/// Alternating refinement stops once the relative MSE gain of an iteration drops below this.
pub const ALTERNATING_REL_TOL: f64 = 1e-6;
pub const ALTERNATING_MAX_ITERS: usize = 100;

/// How many coefficient sets a matrix is quantized with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One set of `k` coefficients for the whole matrix.
    #[default]
    WholeMatrix,
    /// One set of `k` coefficients per row.
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerKind {
    #[default]
    Greedy,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantStatus {
    #[default]
    Ok,
    /// The stacked bit planes were linearly dependent, so a least-squares
    /// coefficient solve was skipped and the previous coefficients kept.
    DegeneratePlanes,
}

/// `W ≈ Σᵢ αᵢ Bᵢ` with `Bᵢ ∈ {-1, +1}` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedForm {
    pub bits: usize,
    pub granularity: Granularity,
    /// One coefficient vector of length `bits` per group (a single group for
    /// [`Granularity::WholeMatrix`], one per row for [`Granularity::PerRow`]).
    pub alphas: Vec<Vec<f64>>,
    pub bit_planes: Vec<Matrix>,
    pub status: QuantStatus,
}

impl QuantizedForm {
    pub fn shape(&self) -> (usize, usize) {
        self.bit_planes[0].shape()
    }

    pub fn reconstruct(&self) -> Matrix {
        let (rows, cols) = self.shape();
        let mut out = Matrix::zeros(rows, cols);
        for (g, range) in groups(rows, cols, self.granularity).enumerate() {
            let alphas = &self.alphas[g];
            let dst = &mut out.as_mut_slice()[range.clone()];
            for (alpha, plane) in alphas.iter().zip(&self.bit_planes) {
                for (d, b) in dst.iter_mut().zip(&plane.as_slice()[range.clone()]) {
                    *d += alpha * b;
                }
            }
        }
        out
    }

    /// Mean squared error against `w`.
    pub fn mse(&self, w: &Matrix) -> f64 {
        let rec = self.reconstruct();
        sq_dist(w.as_slice(), rec.as_slice()) / w.len() as f64
    }

    /// The `2^k` representable values of group `g`, sorted ascending.
    pub fn codebook(&self, g: usize) -> Vec<f64> {
        Codebook::new(&self.alphas[g]).entries.iter().map(|e| e.value).collect()
    }
}

fn groups(rows: usize, cols: usize, granularity: Granularity) -> impl Iterator<Item = std::ops::Range<usize>> {
    let (count, width) = match granularity {
        Granularity::WholeMatrix => (1, rows * cols),
        Granularity::PerRow => (rows, cols),
    };
    (0..count).map(move |g| g * width..(g + 1) * width)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn check_bits(k: usize) -> Result<()> {
    if k == 0 {
        return Err(CompressError::Domain {
            what: "bit count",
            value: 0.0,
        });
    }
    Ok(())
}

/// Bit planes for one group, each of the group's length.
type Planes = Vec<Vec<f64>>;

fn reconstruct_group(alphas: &[f64], planes: &Planes, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (a, p) in alphas.iter().zip(planes) {
        out.iter_mut().zip(p).for_each(|(o, b)| *o += a * b);
    }
    out
}

/// `b_i = sign(r_{i-1})`, `α_i = r_{i-1}ᵀ b_i / n`, starting from `r_0 = w`.
fn greedy_group(w: &[f64], k: usize) -> (Vec<f64>, Planes) {
    let n = w.len() as f64;
    let mut residual = w.to_vec();
    let mut alphas = Vec::with_capacity(k);
    let mut planes = Vec::with_capacity(k);
    for _ in 0..k {
        let plane: Vec<f64> = residual.iter().map(|&r| sign(r)).collect();
        let alpha = residual.iter().map(|r| r.abs()).sum::<f64>() / n;
        residual
            .iter_mut()
            .zip(&plane)
            .for_each(|(r, b)| *r -= alpha * b);
        alphas.push(alpha);
        planes.push(plane);
    }
    (alphas, planes)
}

/// Least-squares coefficients for fixed planes. `None` when the planes are
/// linearly dependent.
fn refine_group(w: &[f64], planes: &Planes) -> Option<Vec<f64>> {
    let n = w.len();
    let k = planes.len();
    let b = Matrix::from_fn(n, k, |i, j| planes[j][i]);
    let target = Matrix::new(n, 1, w.to_vec()).ok()?;
    match least_squares(&b, &target) {
        Ok(x) => Some(x.into_vec()),
        Err(LinalgError::RankDeficient { .. }) => None,
        Err(_) => None,
    }
}

struct CodebookEntry {
    value: f64,
    pattern: usize,
}

/// Sorted representable values `Σ ±αᵢ`. Pattern bit `k-1-i` set means `b_i = +1`,
/// so integer order on patterns is lexicographic order on sign vectors with -1 < +1.
struct Codebook {
    bits: usize,
    entries: Vec<CodebookEntry>,
}

impl Codebook {
    fn new(alphas: &[f64]) -> Self {
        let k = alphas.len();
        let mut entries: Vec<CodebookEntry> = (0..1usize << k)
            .map(|pattern| CodebookEntry {
                value: (0..k)
                    .map(|i| {
                        if pattern >> (k - 1 - i) & 1 == 1 {
                            alphas[i]
                        } else {
                            -alphas[i]
                        }
                    })
                    .sum(),
                pattern,
            })
            .collect();
        entries.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.pattern.cmp(&b.pattern)));
        entries.dedup_by(|later, earlier| later.value == earlier.value);
        Self { bits: k, entries }
    }

    /// Nearest representable value by binary search; equidistant candidates
    /// resolve to the lexicographically smaller sign pattern.
    fn nearest(&self, x: f64) -> usize {
        let idx = self.entries.partition_point(|e| e.value < x);
        if idx == 0 {
            return self.entries[0].pattern;
        }
        if idx == self.entries.len() {
            return self.entries[idx - 1].pattern;
        }
        let lo = &self.entries[idx - 1];
        let hi = &self.entries[idx];
        let (dl, dh) = (x - lo.value, hi.value - x);
        if dl < dh || (dl == dh && lo.pattern < hi.pattern) {
            lo.pattern
        } else {
            hi.pattern
        }
    }

    fn sign_of(&self, pattern: usize, i: usize) -> f64 {
        if pattern >> (self.bits - 1 - i) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

fn assign_nearest(w: &[f64], alphas: &[f64]) -> Planes {
    let book = Codebook::new(alphas);
    let k = alphas.len();
    let mut planes = vec![vec![0.0; w.len()]; k];
    for (j, &x) in w.iter().enumerate() {
        let pattern = book.nearest(x);
        for (i, plane) in planes.iter_mut().enumerate() {
            plane[j] = book.sign_of(pattern, i);
        }
    }
    planes
}

struct GroupResult {
    alphas: Vec<f64>,
    planes: Planes,
    degenerate: bool,
    history: Vec<f64>,
}

fn alternating_group(w: &[f64], k: usize) -> GroupResult {
    let n = w.len();
    let mse_of = |alphas: &[f64], planes: &Planes| sq_dist(w, &reconstruct_group(alphas, planes, n)) / n as f64;

    let (greedy_alphas, mut planes) = greedy_group(w, k);
    let mut degenerate = false;
    let mut alphas = match refine_group(w, &planes) {
        Some(a) => a,
        None => {
            degenerate = true;
            greedy_alphas
        }
    };
    let mut mse = mse_of(&alphas, &planes);
    let mut history = vec![mse];

    for _ in 0..ALTERNATING_MAX_ITERS {
        let new_planes = assign_nearest(w, &alphas);
        let (new_alphas, deg) = match refine_group(w, &new_planes) {
            Some(a) => (a, false),
            None => (alphas.clone(), true),
        };
        let new_mse = mse_of(&new_alphas, &new_planes);
        if new_mse > mse {
            // Only reachable through rounding; keep the better iterate.
            break;
        }
        let unchanged = new_planes == planes;
        let gain = if mse > 0.0 { (mse - new_mse) / mse } else { 0.0 };
        planes = new_planes;
        alphas = new_alphas;
        degenerate = deg;
        mse = new_mse;
        history.push(mse);
        if unchanged || gain < ALTERNATING_REL_TOL {
            break;
        }
    }
    GroupResult {
        alphas,
        planes,
        degenerate,
        history,
    }
}

fn assemble(
    rows: usize,
    cols: usize,
    k: usize,
    granularity: Granularity,
    results: Vec<(Vec<f64>, Planes)>,
    degenerate: bool,
) -> QuantizedForm {
    let mut planes = vec![Matrix::zeros(rows, cols); k];
    let mut alphas = Vec::with_capacity(results.len());
    for (range, (group_alphas, group_planes)) in groups(rows, cols, granularity).zip(results) {
        for (dst, src) in planes.iter_mut().zip(&group_planes) {
            dst.as_mut_slice()[range.clone()].copy_from_slice(src);
        }
        alphas.push(group_alphas);
    }
    QuantizedForm {
        bits: k,
        granularity,
        alphas,
        bit_planes: planes,
        status: if degenerate {
            QuantStatus::DegeneratePlanes
        } else {
            QuantStatus::Ok
        },
    }
}

/// One-bit quantization over the whole matrix: `b = sign(w)` (with `sign(0) = +1`)
/// and `α = mean(|w|)`, the exact minimizer of `||w - α b||²`.
pub fn binary_quantize(w: &Matrix) -> QuantizedForm {
    greedy_quantize(w, 1, Granularity::WholeMatrix).expect("one bit is always valid")
}

/// Greedy residual quantization with `k` bit planes.
pub fn greedy_quantize(w: &Matrix, k: usize, granularity: Granularity) -> Result<QuantizedForm> {
    check_bits(k)?;
    let (rows, cols) = w.shape();
    let results = groups(rows, cols, granularity)
        .map(|r| greedy_group(&w.as_slice()[r], k))
        .collect();
    Ok(assemble(rows, cols, k, granularity, results, false))
}

/// Replaces the coefficients of `q` with the least-squares solution
/// `((BᵀB)⁻¹ Bᵀ w)` for its bit planes. Groups whose planes are linearly
/// dependent keep their coefficients and mark the result degenerate.
pub fn refine_alphas(q: &QuantizedForm, w: &Matrix) -> Result<QuantizedForm> {
    if q.shape() != w.shape() {
        return Err(CompressError::Shape(format!(
            "quantized form is {:?} but weights are {:?}",
            q.shape(),
            w.shape()
        )));
    }
    let (rows, cols) = w.shape();
    let mut out = q.clone();
    let mut degenerate = false;
    for (g, range) in groups(rows, cols, q.granularity).enumerate() {
        let planes: Planes = q
            .bit_planes
            .iter()
            .map(|p| p.as_slice()[range.clone()].to_vec())
            .collect();
        match refine_group(&w.as_slice()[range], &planes) {
            Some(a) => out.alphas[g] = a,
            None => degenerate = true,
        }
    }
    out.status = if degenerate {
        QuantStatus::DegeneratePlanes
    } else {
        QuantStatus::Ok
    };
    Ok(out)
}

/// Alternating multi-bit quantization; see [`alternating_quantize_traced`].
pub fn alternating_quantize(w: &Matrix, k: usize, granularity: Granularity) -> Result<QuantizedForm> {
    alternating_quantize_traced(w, k, granularity).map(|(q, _)| q)
}

/// Starts from refined greedy output, then alternates nearest-codebook bit
/// assignment with a least-squares coefficient solve until an iteration leaves
/// the planes unchanged, improves MSE by less than [`ALTERNATING_REL_TOL`]
/// (relative), or [`ALTERNATING_MAX_ITERS`] is reached.
///
/// Also returns the per-group MSE after the initial refinement and after each iteration.
pub fn alternating_quantize_traced(
    w: &Matrix,
    k: usize,
    granularity: Granularity,
) -> Result<(QuantizedForm, Vec<Vec<f64>>)> {
    check_bits(k)?;
    let (rows, cols) = w.shape();
    let mut degenerate = false;
    let mut histories = Vec::new();
    let results = groups(rows, cols, granularity)
        .map(|r| {
            let res = alternating_group(&w.as_slice()[r], k);
            degenerate |= res.degenerate;
            histories.push(res.history);
            (res.alphas, res.planes)
        })
        .collect();
    Ok((assemble(rows, cols, k, granularity, results, degenerate), histories))
}

/// Quantizes with the chosen method and returns the dequantized matrix.
pub fn quantize_distort(
    w: &Matrix,
    k: usize,
    kind: QuantizerKind,
    granularity: Granularity,
) -> Result<Matrix> {
    let q = match kind {
        QuantizerKind::Greedy => greedy_quantize(w, k, granularity)?,
        QuantizerKind::Alternating => alternating_quantize(w, k, granularity)?,
    };
    Ok(q.reconstruct())
}
