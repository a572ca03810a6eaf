//! Numerical primitives shared by the metrics and the analysis layer.
//!
//! Everything accumulates in `f64`. Row-parallel work is collected back in
//! index order, so results never depend on the rayon thread count.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageDataset;
use crate::error::{Error, Result};

/// A dense row-major point cloud (`n` points of dimension `dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(data, dim)
    }

    pub fn from_dataset(ds: &ImageDataset) -> Self {
        Self {
            data: ds.pixels().iter().map(|&p| p as f64).collect(),
            dim: ds.n_features(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }
}

/// Anything that can hand out dense `f64` rows.
pub trait RowSource: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn fill_row(&self, i: usize, out: &mut [f64]);
}

impl RowSource for Points {
    fn n_rows(&self) -> usize {
        self.len()
    }
    fn n_cols(&self) -> usize {
        self.dim
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(i));
    }
}

impl RowSource for DMatrix<f64> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }
    fn n_cols(&self) -> usize {
        self.ncols()
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(self.row(i).iter()) {
            *o = *v;
        }
    }
}

impl RowSource for ImageDataset {
    fn n_rows(&self) -> usize {
        self.n_samples()
    }
    fn n_cols(&self) -> usize {
        self.n_features()
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(self.image(i)) {
            *o = p as f64;
        }
    }
}

/// Strided read-only view of column-major storage.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> Operand<'a> {
    pub(crate) fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    fn of(m: &'a DMatrix<f64>) -> Self {
        Self {
            data: m.as_slice(),
            rows: m.nrows(),
            cols: m.ncols(),
            rs: 1,
            cs: m.nrows() as isize,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Rows `start..start + len` of an untransposed column-major operand.
    fn row_block(self, start: usize, len: usize) -> Self {
        debug_assert!(self.rs == 1 && start + len <= self.rows);
        Self {
            data: &self.data[start..],
            rows: len,
            ..self
        }
    }
}

/// `c = a * b + beta * c`.
fn gemm(c: &mut DMatrix<f64>, a: Operand<'_>, b: Operand<'_>, beta: f64) {
    let rows = c.nrows() as isize;
    assert!(c.nrows() == a.rows && c.ncols() == b.cols);
    gemm_strided(c.as_mut_slice(), 1, rows, a, b, beta);
}

/// `c = a * b + beta * c` with `c` a row-major `a.rows x b.cols` slice.
pub(crate) fn gemm_row_major(c: &mut [f64], a: Operand<'_>, b: Operand<'_>, beta: f64) {
    assert_eq!(c.len(), a.rows * b.cols);
    gemm_strided(c, b.cols as isize, 1, a, b, beta);
}

fn gemm_strided(c: &mut [f64], crs: isize, ccs: isize, a: Operand<'_>, b: Operand<'_>, beta: f64) {
    assert!(a.cols == b.rows && c.len() >= a.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let last = |o: Operand<'_>| {
        if o.rows == 0 || o.cols == 0 {
            0
        } else {
            (o.rows - 1) * o.rs as usize + (o.cols - 1) * o.cs as usize
        }
    };
    assert!(k == 0 || (last(a) < a.data.len() && last(b) < b.data.len()));
    // SAFETY: every index touched lies within the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            crs,
            ccs,
        );
    }
}

/// Exact k nearest neighbors of every point, self excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Ascending distances `T_1(x) .. T_k(x)`.
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

const KNN_BLOCK: usize = 256;
const KNN_MARGIN: usize = 8;

/// Exact Euclidean k-NN. Ties are broken by the lower index.
///
/// Candidates come from a Gram-matrix expansion computed with blocked GEMM;
/// the final distances are recomputed directly and the candidate cut is
/// checked against a rounding bound, falling back to a full scan of the row
/// when the bound cannot certify it.
pub fn knn(points: &Points, k: usize) -> Result<NeighborTable> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "k must satisfy 1 <= k < n (k={k}, n={n})"
        )));
    }
    if points.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points contain NaN or infinite values"));
    }
    let dim = points.dim;
    let sq: Vec<f64> = (0..n).map(|i| points.row(i).iter().map(|v| v * v).sum()).collect();
    let max_sq = sq.iter().copied().fold(0.0, f64::max);
    let full = points.to_matrix();
    let full_t = Operand::of(&full).t();
    let n_cand = (k + KNN_MARGIN).min(n - 1);

    let blocks: Vec<usize> = (0..n).step_by(KNN_BLOCK).collect();
    let rows: Vec<(Vec<usize>, Vec<f64>)> = blocks
        .par_iter()
        .flat_map_iter(|&start| {
            let len = KNN_BLOCK.min(n - start);
            let block = Operand::of(&full).row_block(start, len);
            let mut gram = DMatrix::<f64>::zeros(len, n);
            gemm(&mut gram, block, full_t, 0.0);
            (0..len)
                .map(|r| {
                    let i = start + r;
                    let bound = 8.0 * (dim as f64 + 2.0) * f64::EPSILON * (sq[i] + max_sq);
                    let mut approx: Vec<(f64, usize)> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| ((sq[i] + sq[j] - 2.0 * gram[(r, j)]).max(0.0), j))
                        .collect();
                    let cutoff = if n_cand < approx.len() {
                        approx.select_nth_unstable_by(n_cand, by_dist_then_index);
                        Some(approx[n_cand].0)
                    } else {
                        None
                    };
                    approx.truncate(n_cand);
                    let mut exact: Vec<(f64, usize)> = approx
                        .iter()
                        .map(|&(_, j)| (sq_dist(points.row(i), points.row(j)), j))
                        .collect();
                    exact.sort_by(by_dist_then_index);
                    let certified = match cutoff {
                        None => true,
                        Some(c) => c - bound > exact[k - 1].0,
                    };
                    if !certified {
                        exact = (0..n)
                            .filter(|&j| j != i)
                            .map(|j| (sq_dist(points.row(i), points.row(j)), j))
                            .collect();
                        exact.sort_by(by_dist_then_index);
                    }
                    exact.truncate(k);
                    exact.into_iter().map(|(d2, j)| (j, d2.sqrt())).unzip()
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (idx, dist) in rows {
        indices.extend(idx);
        distances.extend(dist);
    }
    Ok(NeighborTable {
        k,
        indices,
        distances,
    })
}

/// Covariance eigenvalues, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

impl Spectrum {
    /// Smallest component count whose cumulative share reaches `ratio`.
    /// Zero when the data has no variance at all.
    pub fn components_for(&self, ratio: f64) -> usize {
        if self.total_variance <= 0.0 {
            return 0;
        }
        let mut acc = 0.0;
        for (c, &l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            if acc / self.total_variance >= ratio {
                return c + 1;
            }
        }
        self.eigenvalues.len()
    }
}

const COV_CHUNK: usize = 2048;

/// Eigenvalues of the sample covariance (divisor `n - 1`) of mean-centered rows.
///
/// Works on the `d x d` covariance when `d <= n`, otherwise on the `n x n`
/// Gram matrix, which has the same nonzero spectrum.
pub fn covariance_spectrum<R: RowSource + ?Sized>(x: &R) -> Result<Spectrum> {
    let n = x.n_rows();
    let d = x.n_cols();
    if n < 2 {
        return Err(Error::invalid(format!("covariance needs n >= 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    let mut row = vec![0.0; d];
    for i in 0..n {
        x.fill_row(i, &mut row);
        for (m, v) in mean.iter_mut().zip(&row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let fill_centered = |start: usize, len: usize| {
        let mut chunk = DMatrix::<f64>::zeros(len, d);
        let mut row = vec![0.0; d];
        for r in 0..len {
            x.fill_row(start + r, &mut row);
            for (j, (v, m)) in row.iter().zip(&mean).enumerate() {
                chunk[(r, j)] = v - m;
            }
        }
        chunk
    };

    let mut m = if d <= n {
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for start in (0..n).step_by(COV_CHUNK) {
            let chunk = fill_centered(start, COV_CHUNK.min(n - start));
            gemm(&mut cov, Operand::of(&chunk).t(), Operand::of(&chunk), 1.0);
        }
        cov
    } else {
        let centered = fill_centered(0, n);
        let mut gram = DMatrix::<f64>::zeros(n, n);
        gemm(&mut gram, Operand::of(&centered), Operand::of(&centered).t(), 0.0);
        gram
    };
    m /= (n - 1) as f64;
    let sym = (&m + m.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let tol = 1e-9 * eigenvalues.first().copied().unwrap_or(0.0).abs();
    for l in &mut eigenvalues {
        if *l < 0.0 && *l >= -tol {
            *l = 0.0;
        }
    }
    let total_variance = pairwise_sum(&eigenvalues);
    Ok(Spectrum {
        eigenvalues,
        total_variance,
    })
}

/// All-pairs shortest paths over the k-NN graph, edge weight = distance.
///
/// With `symmetrize` the graph is the union of directed k-NN edges, treated
/// as undirected. Fails with the component count when some pair is unreachable.
pub fn graph_geodesics(neighbors: &NeighborTable, symmetrize: bool) -> Result<DMatrix<f64>> {
    let n = neighbors.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for (&j, &w) in neighbors.indices(i).iter().zip(neighbors.distances(i)) {
            adj[i].push((j, w));
            if symmetrize {
                adj[j].push((i, w));
            }
        }
    }
    let components = if symmetrize {
        undirected_components(&adj)
    } else {
        strongly_connected_components(&adj)
    };
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    if symmetrize {
        // both directions are the same path sum; pin one rounding
        for i in 0..n {
            for j in (i + 1)..n {
                out[(j, i)] = out[(i, j)];
            }
        }
    }
    Ok(out)
}

#[derive(PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((Dist(0.0), source)));
    while let Some(Reverse((Dist(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Dist(nd), v)));
            }
        }
    }
    dist
}

fn undirected_components(adj: &[Vec<(usize, f64)>]) -> usize {
    let n = adj.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (u, edges) in adj.iter().enumerate() {
        for &(v, _) in edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&x| find(&mut parent, x) == x).count()
}

/// Kosaraju with explicit stacks.
fn strongly_connected_components(adj: &[Vec<(usize, f64)>]) -> usize {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![(s, 0usize)];
        while let Some((u, next)) = stack.pop() {
            if next < adj[u].len() {
                stack.push((u, next + 1));
                let v = adj[u][next].0;
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
            }
        }
    }
    let mut radj = vec![Vec::new(); n];
    for (u, edges) in adj.iter().enumerate() {
        for &(v, _) in edges {
            radj[v].push(u);
        }
    }
    let mut assigned = vec![false; n];
    let mut count = 0;
    for &s in order.iter().rev() {
        if assigned[s] {
            continue;
        }
        count += 1;
        assigned[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &v in &radj[u] {
                if !assigned[v] {
                    assigned[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// Ordinary least squares fit of `y` on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

pub fn linfit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} values, y has {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("linear fit needs >= 2 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite value in fit input".into()));
    }
    let mx = pairwise_sum(x) / n as f64;
    let my = pairwise_sum(y) / n as f64;
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx = pairwise_sum(&dx.iter().map(|v| v * v).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|v| v * v).collect::<Vec<_>>());
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    if sxx == 0.0 {
        return Err(Error::Degenerate("x is constant".into()));
    }
    if syy == 0.0 {
        return Err(Error::Degenerate("y is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let pearson_r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(LinearFit {
        slope,
        intercept,
        pearson_r,
        r_squared: (sxy * sxy / (sxx * syy)).min(1.0),
        n,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(linfit(&average_ranks(x), &average_ranks(y))?.pearson_r)
}

/// Pairwise (cascade) summation; error grows with `log n`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}
