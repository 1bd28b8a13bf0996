//! Sparse direct solver: nested-dissection column ordering followed by a
//! left-looking LU factorization with threshold partial pivoting
//! (Gilbert-Peierls). Deterministic for a given matrix.

use std::collections::VecDeque;

use crate::sparse::CsrMatrix;

/// Diagonal entries are kept as pivots when within this factor of the
/// largest candidate in their column.
const PIVOT_THRESHOLD: f64 = 0.1;
/// Subgraphs at or below this size are numbered directly.
const LEAF_SIZE: usize = 64;

#[derive(Debug, Clone)]
pub struct SingularPivot {
    /// Elimination step at which no usable pivot was found.
    pub step: usize,
    /// Original column being eliminated.
    pub column: usize,
    /// Largest candidate magnitude at that step.
    pub largest_candidate: f64,
}

/// Compressed sparse column storage used internally by the factorization.
#[derive(Debug, Clone, Default)]
struct Csc {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// Unit lower factor; the first entry of each column is the unit diagonal.
    l: Csc,
    /// Upper factor; the last entry of each column is the diagonal.
    u: Csc,
    /// Row permutation: original row -> pivot position.
    pinv: Vec<usize>,
    /// Column permutation: elimination step -> original column.
    q: Vec<usize>,
    off_diagonal_pivots: usize,
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SingularPivot> {
        assert_eq!(a.nrows, a.ncols, "LU needs a square matrix");
        let q = nested_dissection(a);
        Self::factor_with_ordering(a, q)
    }

    pub fn factor_with_ordering(a: &CsrMatrix, q: Vec<usize>) -> Result<Self, SingularPivot> {
        let n = a.nrows;
        let acol = to_csc(a);
        let mut l = Csc {
            col_ptr: vec![0; n + 1],
            row_idx: Vec::with_capacity(4 * a.nnz()),
            values: Vec::with_capacity(4 * a.nnz()),
        };
        let mut u = Csc {
            col_ptr: vec![0; n + 1],
            row_idx: Vec::with_capacity(4 * a.nnz()),
            values: Vec::with_capacity(4 * a.nnz()),
        };
        let mut pinv = vec![usize::MAX; n];
        let mut x = vec![0.0; n];
        let mut xi = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut mark = vec![false; n];
        let mut off_diagonal_pivots = 0;

        for k in 0..n {
            l.col_ptr[k] = l.row_idx.len();
            u.col_ptr[k] = u.row_idx.len();
            let col = q[k];
            let top = sparse_lower_solve(
                &l,
                &acol,
                col,
                &pinv,
                &mut x,
                &mut xi,
                &mut stack,
                &mut pstack,
                &mut mark,
            );

            let mut ipiv = usize::MAX;
            let mut largest = -1.0;
            for &i in &xi[top..n] {
                if pinv[i] == usize::MAX {
                    let t = x[i].abs();
                    if t > largest {
                        largest = t;
                        ipiv = i;
                    }
                } else {
                    u.row_idx.push(pinv[i]);
                    u.values.push(x[i]);
                }
            }
            if ipiv == usize::MAX || largest <= 0.0 || !largest.is_finite() {
                return Err(SingularPivot {
                    step: k,
                    column: col,
                    largest_candidate: largest.max(0.0),
                });
            }
            if pinv[col] == usize::MAX && x[col].abs() >= PIVOT_THRESHOLD * largest {
                ipiv = col;
            }
            if ipiv != col {
                off_diagonal_pivots += 1;
            }
            let pivot = x[ipiv];
            u.row_idx.push(k);
            u.values.push(pivot);
            pinv[ipiv] = k;
            l.row_idx.push(ipiv);
            l.values.push(1.0);
            for &i in &xi[top..n] {
                if pinv[i] == usize::MAX {
                    l.row_idx.push(i);
                    l.values.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
        }
        l.col_ptr[n] = l.row_idx.len();
        u.col_ptr[n] = u.row_idx.len();
        for r in l.row_idx.iter_mut() {
            *r = pinv[*r];
        }
        Ok(SparseLu {
            n,
            l,
            u,
            pinv,
            q,
            off_diagonal_pivots,
        })
    }

    /// Elimination steps whose pivot row differs from the column.
    pub fn off_diagonal_pivots(&self) -> usize {
        self.off_diagonal_pivots
    }

    /// Stored entries of `L` and `U`.
    pub fn factor_nnz(&self) -> usize {
        self.l.values.len() + self.u.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            x[self.pinv[i]] = bi;
        }
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l.col_ptr[j] + 1..self.l.col_ptr[j + 1] {
                    x[self.l.row_idx[p]] -= self.l.values[p] * xj;
                }
            }
        }
        for j in (0..self.n).rev() {
            let last = self.u.col_ptr[j + 1] - 1;
            x[j] /= self.u.values[last];
            let xj = x[j];
            if xj != 0.0 {
                for p in self.u.col_ptr[j]..last {
                    x[self.u.row_idx[p]] -= self.u.values[p] * xj;
                }
            }
        }
        let mut out = vec![0.0; self.n];
        for (k, &c) in self.q.iter().enumerate() {
            out[c] = x[k];
        }
        out
    }
}

fn to_csc(a: &CsrMatrix) -> Csc {
    let t = a.transpose();
    Csc {
        col_ptr: t.row_ptr,
        row_idx: t.col_idx,
        values: t.values,
    }
}

/// Solves `L x = A(:, col)` where `L` holds the columns finished so far (with
/// original row indices). Returns `top`; the nonzero pattern is `xi[top..]`
/// in topological order.
#[allow(clippy::too_many_arguments)]
fn sparse_lower_solve(
    l: &Csc,
    a: &Csc,
    col: usize,
    pinv: &[usize],
    x: &mut [f64],
    xi: &mut [usize],
    stack: &mut [usize],
    pstack: &mut [usize],
    mark: &mut [bool],
) -> usize {
    let n = x.len();
    let mut top = n;
    for p in a.col_ptr[col]..a.col_ptr[col + 1] {
        let start = a.row_idx[p];
        if !mark[start] {
            top = reach_dfs(start, l, pinv, top, xi, stack, pstack, mark);
        }
    }
    for &i in &xi[top..n] {
        mark[i] = false;
    }
    for p in a.col_ptr[col]..a.col_ptr[col + 1] {
        x[a.row_idx[p]] = a.values[p];
    }
    for px in top..n {
        let j = xi[px];
        let jj = pinv[j];
        if jj == usize::MAX {
            continue;
        }
        // unit diagonal stored first
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let range = l.col_ptr[jj] + 1..l.col_ptr[jj + 1];
        for (&i, &v) in l.row_idx[range.clone()].iter().zip(&l.values[range]) {
            x[i] -= v * xj;
        }
    }
    top
}

#[allow(clippy::too_many_arguments)]
fn reach_dfs(
    start: usize,
    l: &Csc,
    pinv: &[usize],
    mut top: usize,
    xi: &mut [usize],
    stack: &mut [usize],
    pstack: &mut [usize],
    mark: &mut [bool],
) -> usize {
    let mut head = 0usize;
    stack[0] = start;
    loop {
        let j = stack[head];
        let jj = pinv[j];
        if !mark[j] {
            mark[j] = true;
            pstack[head] = if jj == usize::MAX { 0 } else { l.col_ptr[jj] };
        }
        let end = if jj == usize::MAX { 0 } else { l.col_ptr[jj + 1] };
        let begin = pstack[head];
        let mut done = true;
        if let Some(off) = l.row_idx[begin..end].iter().position(|&i| !mark[i]) {
            let p = begin + off;
            pstack[head] = p + 1;
            head += 1;
            stack[head] = l.row_idx[p];
            done = false;
        }
        if done {
            top -= 1;
            xi[top] = j;
            if head == 0 {
                break;
            }
            head -= 1;
        }
    }
    top
}

/// Column ordering by recursive level-structure bisection of the symmetrized
/// adjacency graph. Rows far denser than average (such as a global constraint
/// row) are numbered last.
pub fn nested_dissection(a: &CsrMatrix) -> Vec<usize> {
    nested_dissection_paired(a, &[], &[])
}

/// Nested dissection in which each pair `(first, second)` is treated as one
/// graph node and numbered consecutively, `first` before `second`. Pairing a
/// zero-diagonal unknown with a strongly coupled partner makes its diagonal
/// usable as a pivot once the partner is eliminated. Nodes in `last` are
/// numbered after everything else, as are automatically detected dense rows.
pub fn nested_dissection_paired(a: &CsrMatrix, pairs: &[(usize, usize)], last: &[usize]) -> Vec<usize> {
    let n = a.nrows;
    let mut rep: Vec<usize> = (0..n).collect();
    let mut partner = vec![usize::MAX; n];
    for &(f, s) in pairs {
        assert!(f != s && rep[f] == f && rep[s] == s && partner[f] == usize::MAX, "pairs must be disjoint");
        rep[s] = f;
        partner[f] = s;
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for (c, _) in a.row(r) {
            let (rr, rc) = (rep[r], rep[c]);
            if rr != rc {
                adj[rr].push(rc);
                adj[rc].push(rr);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let reps: Vec<usize> = (0..n).filter(|&i| rep[i] == i).collect();
    let avg = reps.iter().map(|&i| adj[i].len()).sum::<usize>() as f64 / reps.len().max(1) as f64;
    let dense_cut = (10.0 * avg).max(16.0 * (reps.len() as f64).sqrt());
    let mut dense: Vec<bool> = adj.iter().map(|l| l.len() as f64 > dense_cut).collect();
    for &i in last {
        dense[rep[i]] = true;
    }

    let mut active = vec![false; n];
    let nodes: Vec<usize> = reps.iter().copied().filter(|&i| !dense[i]).collect();
    for &i in &nodes {
        active[i] = true;
    }
    let mut order = Vec::with_capacity(n);
    let mut level = vec![usize::MAX; n];
    dissect(nodes, &adj, &mut active, &mut level, &mut order);
    order.extend(reps.iter().copied().filter(|&i| dense[i]));
    let mut expanded = Vec::with_capacity(n);
    for v in order {
        expanded.push(v);
        if partner[v] != usize::MAX {
            expanded.push(partner[v]);
        }
    }
    debug_assert_eq!(expanded.len(), n);
    expanded
}

fn bfs_levels(root: usize, adj: &[Vec<usize>], active: &[bool], level: &mut [usize]) -> Vec<usize> {
    let mut visited = vec![root];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if active[w] && level[w] == usize::MAX {
                level[w] = level[v] + 1;
                visited.push(w);
                queue.push_back(w);
            }
        }
    }
    visited
}

fn dissect(
    nodes: Vec<usize>,
    adj: &[Vec<usize>],
    active: &mut [bool],
    level: &mut [usize],
    order: &mut Vec<usize>,
) {
    // work list of connected subsets, processed depth-first
    let mut work = vec![nodes];
    let mut pending_separators: Vec<(usize, Vec<usize>)> = Vec::new();
    while let Some(set) = work.pop() {
        if set.len() <= LEAF_SIZE {
            for &v in &set {
                active[v] = false;
            }
            order.extend(set);
        } else {
            // split into connected components first
            let mut components = Vec::new();
            for &v in &set {
                if level[v] == usize::MAX {
                    let comp = bfs_levels(v, adj, active, level);
                    components.push(comp);
                }
            }
            for &v in &set {
                level[v] = usize::MAX;
            }
            if components.len() > 1 {
                work.extend(components.into_iter().rev());
            } else {
                let (low, sep, high) = bisect(&set, adj, active, level);
                if low.is_empty() || high.is_empty() {
                    for &v in &set {
                        active[v] = false;
                    }
                    order.extend(set);
                } else {
                    for &v in &sep {
                        active[v] = false;
                    }
                    pending_separators.push((work.len(), sep));
                    work.push(high);
                    work.push(low);
                }
            }
        }
        // emit separators whose subtrees are complete
        while let Some((depth, _)) = pending_separators.last() {
            if work.len() <= *depth {
                let (_, sep) = pending_separators.pop().unwrap();
                order.extend(sep);
            } else {
                break;
            }
        }
    }
}

fn bisect(
    set: &[usize],
    adj: &[Vec<usize>],
    active: &[bool],
    level: &mut [usize],
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    // pseudo-peripheral root: repeat BFS from the last, deepest node
    let mut root = set[0];
    let mut depth = 0;
    for _ in 0..4 {
        let visited = bfs_levels(root, adj, active, level);
        let far = *visited.last().unwrap();
        let d = level[far];
        for &v in &visited {
            level[v] = usize::MAX;
        }
        if d <= depth {
            break;
        }
        depth = d;
        root = far;
    }
    let visited = bfs_levels(root, adj, active, level);
    let max_level = visited.iter().map(|&v| level[v]).max().unwrap_or(0);
    let mut counts = vec![0usize; max_level + 1];
    for &v in &visited {
        counts[level[v]] += 1;
    }
    let half = visited.len() / 2;
    let mut acc = 0;
    let mut cut = 0;
    for (l, &c) in counts.iter().enumerate() {
        acc += c;
        if acc >= half {
            cut = l;
            break;
        }
    }
    let (mut low, mut sep, mut high) = (Vec::new(), Vec::new(), Vec::new());
    for &v in &visited {
        match level[v].cmp(&cut) {
            std::cmp::Ordering::Less => low.push(v),
            std::cmp::Ordering::Equal => sep.push(v),
            std::cmp::Ordering::Greater => high.push(v),
        }
    }
    for &v in &visited {
        level[v] = usize::MAX;
    }
    (low, sep, high)
}
