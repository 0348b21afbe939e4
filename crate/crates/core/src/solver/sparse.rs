//! Block-sparse Cholesky factorization of symmetric positive definite systems.
//!
//! The matrix is described by a block pattern (block sizes plus the set of
//! nonzero off-diagonal blocks). A greedy minimum-degree ordering is computed
//! once on the block graph, together with the fill pattern of the factor and
//! the location of every update, so repeated numeric factorizations with the
//! same pattern only do arithmetic.
//!
//! Consecutive columns whose row patterns nest (fundamental supernodes) share
//! one dense row-major panel: the diagonal block on top, followed by the
//! off-diagonal row blocks in elimination order. Schur updates are grouped
//! into runs of rows that are contiguous in both source and target panel.

use std::collections::BTreeSet;

/// Pivots below this fraction of the original diagonal entry count as singular.
const PIVOT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone)]
struct Update {
    target: usize,
    /// Source rows `a_start..a_start + a_len` times source rows
    /// `b_start..b_start + b_len`, transposed.
    a_start: usize,
    a_len: usize,
    b_start: usize,
    b_len: usize,
    row_offset: usize,
    col_offset: usize,
    /// The A rows begin with the B rows, so only `y <= x` is needed.
    triangular: bool,
}

#[derive(Debug, Clone)]
struct Supernode {
    /// Elimination position of the first column.
    first: usize,
    /// Number of block columns.
    ncols: usize,
    /// Scalar width.
    width: usize,
    /// Elimination positions of the row blocks; the first `ncols` are the
    /// supernode's own columns.
    rows: Vec<usize>,
    /// Scalar row offset of each row block inside the panel.
    offsets: Vec<usize>,
    height: usize,
    updates: Vec<Update>,
}

#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    dims: Vec<usize>,
    /// Scalar offset of each block in natural order.
    starts: Vec<usize>,
    /// Elimination position to block.
    order: Vec<usize>,
    /// Block to elimination position.
    pos: Vec<usize>,
    /// Supernode of each elimination position.
    node_of: Vec<usize>,
    /// Scalar offset of each elimination position in the work vector.
    estart: Vec<usize>,
    nodes: Vec<Supernode>,
    /// Length of the transposed-block scratch buffer.
    scratch: usize,
    /// Length of the column-block scratch buffer.
    panel_scratch: usize,
}

/// Greedy minimum-degree elimination order on a block graph; degrees are
/// weighted by block size and ties go to the lowest block index.
fn minimum_degree(dims: &[usize], mut adj: Vec<BTreeSet<usize>>) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = dims.len();
    let weight = |adj: &BTreeSet<usize>| adj.iter().map(|&b| dims[b]).sum::<usize>();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|b| (weight(&adj[b]), b)).collect();
    let mut key: Vec<usize> = (0..n).map(|b| weight(&adj[b])).collect();
    let mut order = Vec::with_capacity(n);
    let mut structure = vec![Vec::new(); n];
    while let Some((_, v)) = queue.pop_first() {
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        for &a in &nbrs {
            queue.remove(&(key[a], a));
            key[a] = weight(&adj[a]);
            queue.insert((key[a], a));
        }
        structure[v] = nbrs;
        order.push(v);
    }
    (order, structure)
}


/// `T -= A B^T` on rows of width `D`; `T` has row stride `stride`. `bt` is
/// scratch for `B` transposed. With `triangular` only entries `y <= x` are
/// touched.
#[inline(always)]
fn update_run<const D: usize>(a: &[[f64; D]], b: &[[f64; D]], bt: &mut [f64], t: &mut [f64], stride: usize, triangular: bool) {
    let wb = b.len();
    let bt = &mut bt[..D * wb];
    for (y, brow) in b.iter().enumerate() {
        for k in 0..D {
            bt[k * wb + y] = brow[k];
        }
    }
    let cols: [&[f64]; D] = std::array::from_fn(|k| &bt[k * wb..(k + 1) * wb]);
    for (x, arow) in a.iter().enumerate() {
        let ylim = if triangular { wb.min(x + 1) } else { wb };
        let trow = &mut t[x * stride..x * stride + ylim];
        let cols: [&[f64]; D] = std::array::from_fn(|k| &cols[k][..ylim]);
        for y in 0..ylim {
            let mut s = 0.0;
            for k in 0..D {
                s += arow[k] * cols[k][y];
            }
            trow[y] -= s;
        }
    }
}

fn update_run_any(d: usize, a: &[f64], b: &[f64], t: &mut [f64], stride: usize, triangular: bool) {
    let bl = b.len() / d;
    for (x, arow) in a.chunks_exact(d).enumerate() {
        let ylim = if triangular { bl.min(x + 1) } else { bl };
        let trow = &mut t[x * stride..x * stride + ylim];
        for (tv, brow) in trow.iter_mut().zip(b.chunks_exact(d)) {
            *tv -= arow.iter().zip(brow).map(|(p, q)| p * q).sum::<f64>();
        }
    }
}

/// Column block width of the panel factorization.
const PANEL: usize = 6;

/// Cholesky of the leading `bw x bw` block of `a` (row-major, width `bw`)
/// fused with `B <- B L^-T` for the rows below it. Returns the failing column.
fn factor_columns(a: &mut [f64], bw: usize) -> Result<(), usize> {
    let rows = a.len() / bw;
    for c in 0..bw {
        let orig = a[c * bw + c];
        let d = orig - (0..c).map(|k| a[c * bw + k] * a[c * bw + k]).sum::<f64>();
        if !(d > PIVOT_TOLERANCE * orig.abs()) || !d.is_finite() {
            return Err(c);
        }
        let d = d.sqrt();
        a[c * bw + c] = d;
        let inv = 1.0 / d;
        let (top, bottom) = a.split_at_mut((c + 1) * bw);
        let pivot = &top[c * bw..c * bw + c];
        for row in bottom.chunks_exact_mut(bw) {
            let v = row[c] - (0..c).map(|k| row[k] * pivot[k]).sum::<f64>();
            row[c] = v * inv;
        }
        debug_assert_eq!(rows * bw, a.len());
    }
    Ok(())
}

/// Factors a supernode panel (`height x w`, row-major) in place: the diagonal
/// block becomes `L`, the rows below become `B L^-T`. Right-looking over
/// column blocks of [`PANEL`].
fn factor_panel(panel: &mut [f64], w: usize, work: &mut [f64], bt: &mut [f64]) -> Result<(), usize> {
    if w <= PANEL {
        factor_columns(panel, w)?;
    } else {
        let height = panel.len() / w;
        for c0 in (0..w).step_by(PANEL) {
            let bw = PANEL.min(w - c0);
            let rows = height - c0;
            let a = &mut work[..rows * bw];
            for (r, dst) in a.chunks_exact_mut(bw).enumerate() {
                dst.copy_from_slice(&panel[(c0 + r) * w + c0..(c0 + r) * w + c0 + bw]);
            }
            factor_columns(a, bw).map_err(|c| c0 + c)?;
            for (r, src) in a.chunks_exact(bw).enumerate() {
                panel[(c0 + r) * w + c0..(c0 + r) * w + c0 + bw].copy_from_slice(src);
            }
            let rest = w - c0 - bw;
            if rest > 0 {
                let below = &a[bw * bw..];
                let t = &mut panel[(c0 + bw) * w + c0 + bw..];
                if bw == PANEL {
                    let rows: &[[f64; PANEL]] = as_rows(below);
                    update_run::<PANEL>(rows, &rows[..rest], bt, t, w, true);
                } else {
                    update_run_any(bw, below, &below[..rest * bw], t, w, true);
                }
            }
        }
    }
    for c in 0..w {
        panel[c * w + c + 1..(c + 1) * w].fill(0.0);
    }
    Ok(())
}

/// Views a row-major panel of width `D` as rows.
fn as_rows<const D: usize>(panel: &[f64]) -> &[[f64; D]] {
    let (rows, rest) = panel.as_chunks::<D>();
    debug_assert!(rest.is_empty());
    rows
}

impl SymbolicCholesky {
    /// `edges` lists the off-diagonal nonzero blocks as unordered pairs.
    pub fn new(dims: Vec<usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let n = dims.len();
        let mut adj = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let (order, structure) = minimum_degree(&dims, adj);
        let mut pos = vec![0; n];
        for (p, &b) in order.iter().enumerate() {
            pos[b] = p;
        }
        // Row pattern of each column below the diagonal, in elimination order.
        let below: Vec<Vec<usize>> = order
            .iter()
            .map(|&b| {
                let mut rows: Vec<usize> = structure[b].iter().map(|&r| pos[r]).collect();
                rows.sort_unstable();
                rows
            })
            .collect();
        let pdim = |p: usize| dims[order[p]];

        let mut nodes: Vec<Supernode> = Vec::new();
        let mut node_of = vec![0; n];
        let mut p = 0;
        while p < n {
            let first = p;
            while p + 1 < n && below[p].first() == Some(&(p + 1)) && below[p][1..] == below[p + 1][..] {
                p += 1;
            }
            let ncols = p - first + 1;
            let mut rows: Vec<usize> = (first..=p).collect();
            rows.extend_from_slice(&below[p]);
            let mut offsets = Vec::with_capacity(rows.len());
            let mut height = 0;
            for &r in &rows {
                offsets.push(height);
                height += pdim(r);
            }
            let width = offsets.get(ncols).copied().unwrap_or(height);
            for q in first..=p {
                node_of[q] = nodes.len();
            }
            nodes.push(Supernode { first, ncols, width, rows, offsets, height, updates: Vec::new() });
            p += 1;
        }

        for s in 0..nodes.len() {
            let node = &nodes[s];
            let rest = &node.rows[node.ncols..];
            let roff = &node.offsets[node.ncols..];
            let rlen = |i: usize| pdim(rest[i]);
            let mut updates = Vec::new();
            let mut i = 0;
            while i < rest.len() {
                // Run of B rows: consecutive columns of one target supernode.
                let t = node_of[rest[i]];
                let mut j = i + 1;
                while j < rest.len() && rest[j] == rest[j - 1] + 1 && node_of[rest[j]] == t {
                    j += 1;
                }
                let target = &nodes[t];
                let b_len: usize = (i..j).map(rlen).sum();
                let col_offset = target.offsets[rest[i] - target.first];
                // Runs of A rows contiguous in the target's row list.
                let mut m = i;
                while m < rest.len() {
                    let k0 = target.rows.binary_search(&rest[m]).expect("elimination fill is closed under updates");
                    let mut e = m + 1;
                    while e < rest.len() && target.rows.get(k0 + e - m) == Some(&rest[e]) {
                        e += 1;
                    }
                    updates.push(Update {
                        target: t,
                        a_start: roff[m],
                        a_len: (m..e).map(rlen).sum(),
                        b_start: roff[i],
                        b_len,
                        row_offset: target.offsets[k0],
                        col_offset,
                        triangular: m == i,
                    });
                    m = e;
                }
                i = j;
            }
            nodes[s].updates = updates;
        }

        let mut starts = Vec::with_capacity(n);
        let mut total = 0;
        for &d in &dims {
            starts.push(total);
            total += d;
        }
        let mut estart = Vec::with_capacity(n);
        let mut total = 0;
        for &b in &order {
            estart.push(total);
            total += dims[b];
        }
        let scratch = nodes.iter().flat_map(|s| s.updates.iter().map(|u| u.b_len * s.width)).max().unwrap_or(0);
        let scratch = scratch.max(nodes.iter().map(|s| s.width * PANEL).max().unwrap_or(0));
        let panel_scratch = nodes.iter().map(|s| s.height * PANEL).max().unwrap_or(0);
        SymbolicCholesky { dims, starts, order, pos, node_of, estart, nodes, scratch, panel_scratch }
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    /// Total scalar dimension.
    pub fn size(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn block_start(&self, block: usize) -> usize {
        self.starts[block]
    }

    pub fn block_dim(&self, block: usize) -> usize {
        self.dims[block]
    }

    /// Number of stored scalars in the factor, upper parts of diagonal
    /// blocks included.
    pub fn factor_nnz(&self) -> usize {
        self.nodes.iter().map(|s| s.height * s.width).sum()
    }

    pub fn zeros(&self) -> BlockMatrix {
        BlockMatrix { panels: self.nodes.iter().map(|s| vec![0.0; s.height * s.width]).collect() }
    }

    /// Panel and scalar column offset of the diagonal of a block.
    fn diagonal_of(&self, block: usize) -> (usize, usize) {
        let p = self.pos[block];
        let s = self.node_of[p];
        (s, self.nodes[s].offsets[p - self.nodes[s].first])
    }

    /// Where block `(row, col)` of the matrix lives. The returned slot holds the
    /// transposed block when `transposed` is set.
    pub fn locate(&self, row: usize, col: usize) -> Option<Slot> {
        let (pr, pc) = (self.pos[row], self.pos[col]);
        let (hi, lo, transposed) = if pr >= pc { (pr, pc, false) } else { (pc, pr, true) };
        let s = self.node_of[lo];
        let node = &self.nodes[s];
        let k = node.rows.binary_search(&hi).ok()?;
        Some(Slot {
            panel: s,
            row_offset: node.offsets[k],
            col_offset: node.offsets[lo - node.first],
            width: node.width,
            transposed,
        })
    }

    /// In-place factorization `A = L L^T`. On failure returns the block whose
    /// pivot vanished.
    pub fn factor(&self, m: &mut BlockMatrix) -> Result<(), usize> {
        let mut bt = vec![0.0; self.scratch];
        let mut work = vec![0.0; self.panel_scratch];
        for (s, node) in self.nodes.iter().enumerate() {
            let w = node.width;
            let (head, tail) = m.panels.split_at_mut(s + 1);
            if let Err(c) = factor_panel(&mut head[s], w, &mut work, &mut bt) {
                let k = node.offsets[..node.ncols].partition_point(|&o| o <= c) - 1;
                return Err(self.order[node.first + k]);
            }
            let panel = &head[s];
            match w {
                1 => self.schur_updates::<1>(node, panel, tail, s, &mut bt),
                3 => self.schur_updates::<3>(node, panel, tail, s, &mut bt),
                6 => self.schur_updates::<6>(node, panel, tail, s, &mut bt),
                _ => {
                    for u in &node.updates {
                        let tw = self.nodes[u.target].width;
                        let t = &mut tail[u.target - s - 1][u.row_offset * tw + u.col_offset..];
                        let a = &panel[u.a_start * w..(u.a_start + u.a_len) * w];
                        let b = &panel[u.b_start * w..(u.b_start + u.b_len) * w];
                        update_run_any(w, a, b, t, tw, u.triangular);
                    }
                }
            }
        }
        Ok(())
    }

    fn schur_updates<const D: usize>(&self, node: &Supernode, panel: &[f64], tail: &mut [Vec<f64>], s: usize, bt: &mut [f64]) {
        let rows: &[[f64; D]] = as_rows(panel);
        for u in &node.updates {
            let tw = self.nodes[u.target].width;
            let t = &mut tail[u.target - s - 1][u.row_offset * tw + u.col_offset..];
            let a = &rows[u.a_start..u.a_start + u.a_len];
            let b = &rows[u.b_start..u.b_start + u.b_len];
            update_run::<D>(a, b, bt, t, tw, u.triangular);
        }
    }

    /// Solves `L L^T x = b` with a factored matrix; `b` and `x` in natural order.
    pub fn solve(&self, l: &BlockMatrix, b: &[f64]) -> Vec<f64> {
        let estart = &self.estart;
        let mut y = vec![0.0; b.len()];
        for (p, &blk) in self.order.iter().enumerate() {
            y[estart[p]..estart[p] + self.dims[blk]].copy_from_slice(&b[self.starts[blk]..self.starts[blk] + self.dims[blk]]);
        }
        let mut own = Vec::new();
        for (node, panel) in self.nodes.iter().zip(&l.panels) {
            let w = node.width;
            let s = estart[node.first];
            for c in 0..w {
                let v = y[s + c] - dot(&panel[c * w..c * w + c], &y[s..s + c]);
                y[s + c] = v / panel[c * w + c];
            }
            own.clear();
            own.extend_from_slice(&y[s..s + w]);
            for (k, &r) in node.rows.iter().enumerate().skip(node.ncols) {
                let off = node.offsets[k];
                let rs = estart[r];
                for x in 0..self.dims[self.order[r]] {
                    y[rs + x] -= dot(&panel[(off + x) * w..(off + x + 1) * w], &own);
                }
            }
        }
        for (node, panel) in self.nodes.iter().zip(&l.panels).rev() {
            let w = node.width;
            let s = estart[node.first];
            for (k, &r) in node.rows.iter().enumerate().skip(node.ncols) {
                let off = node.offsets[k];
                let rs = estart[r];
                for x in 0..self.dims[self.order[r]] {
                    let xv = y[rs + x];
                    let row = &panel[(off + x) * w..(off + x + 1) * w];
                    for (yc, rc) in y[s..s + w].iter_mut().zip(row) {
                        *yc -= rc * xv;
                    }
                }
            }
            for c in (0..w).rev() {
                let mut v = y[s + c];
                for k in (c + 1)..w {
                    v -= panel[k * w + c] * y[s + k];
                }
                y[s + c] = v / panel[c * w + c];
            }
        }
        let mut x = vec![0.0; b.len()];
        for (p, &blk) in self.order.iter().enumerate() {
            x[self.starts[blk]..self.starts[blk] + self.dims[blk]].copy_from_slice(&y[estart[p]..estart[p] + self.dims[blk]]);
        }
        x
    }

    /// Scalar diagonal of the (unfactored) matrix in natural order.
    pub fn diagonal(&self, m: &BlockMatrix) -> Vec<f64> {
        let mut d = vec![0.0; self.size()];
        for blk in 0..self.dims.len() {
            let (s, o) = self.diagonal_of(blk);
            let w = self.nodes[s].width;
            for c in 0..self.dims[blk] {
                d[self.starts[blk] + c] = m.panels[s][(o + c) * w + o + c];
            }
        }
        d
    }

    /// Adds `v[i]` to the `i`-th diagonal entry (natural order).
    pub fn add_diagonal(&self, m: &mut BlockMatrix, v: &[f64]) {
        for blk in 0..self.dims.len() {
            let (s, o) = self.diagonal_of(blk);
            let w = self.nodes[s].width;
            for c in 0..self.dims[blk] {
                m.panels[s][(o + c) * w + o + c] += v[self.starts[blk] + c];
            }
        }
    }

    /// Dense symmetric copy of an unfactored matrix, natural order.
    pub fn to_dense(&self, m: &BlockMatrix) -> nalgebra::DMatrix<f64> {
        let n = self.size();
        let mut out = nalgebra::DMatrix::zeros(n, n);
        for (s, node) in self.nodes.iter().enumerate() {
            let w = node.width;
            for (k, &r) in node.rows.iter().enumerate() {
                let rb = self.order[r];
                for (kc, &c) in node.rows[..node.ncols].iter().enumerate() {
                    let cb = self.order[c];
                    if c > r {
                        continue;
                    }
                    for x in 0..self.dims[rb] {
                        for y in 0..self.dims[cb] {
                            if c == r && x < y {
                                continue;
                            }
                            let v = m.panels[s][(node.offsets[k] + x) * w + node.offsets[kc] + y];
                            let (i, j) = (self.starts[rb] + x, self.starts[cb] + y);
                            out[(i, j)] = v;
                            out[(j, i)] = v;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Dot product with four partial sums so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (ac, ar) = a.as_chunks::<4>();
    let (bc, br) = b.as_chunks::<4>();
    let mut acc = [0.0; 4];
    for (p, q) in ac.iter().zip(bc) {
        for i in 0..4 {
            acc[i] += p[i] * q[i];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(p, q)| p * q).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Location of one matrix block inside the panel storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    panel: usize,
    row_offset: usize,
    col_offset: usize,
    width: usize,
    transposed: bool,
}

/// Numeric values for a [`SymbolicCholesky`] pattern: the lower triangle of a
/// symmetric matrix before factoring, `L` afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    panels: Vec<Vec<f64>>,
}

impl BlockMatrix {
    pub fn fill_zero(&mut self) {
        for p in &mut self.panels {
            p.fill(0.0);
        }
    }

    pub fn copy_from(&mut self, other: &BlockMatrix) {
        for (a, b) in self.panels.iter_mut().zip(&other.panels) {
            a.copy_from_slice(b);
        }
    }

    /// Adds `value` at entry `(x, y)` of the block behind `slot`. Diagonal
    /// blocks only keep their lower triangle, so callers add `x >= y` there.
    #[inline]
    pub fn add(&mut self, slot: Slot, x: usize, y: usize, value: f64) {
        let (x, y) = if slot.transposed { (y, x) } else { (x, y) };
        self.panels[slot.panel][(slot.row_offset + x) * slot.width + slot.col_offset + y] += value;
    }
}
