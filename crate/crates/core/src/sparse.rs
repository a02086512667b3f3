//! Envelope (skyline) Cholesky factorisation for the reduced nodal
//! matrices, with a reverse Cuthill–McKee ordering computed once per
//! circuit topology.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite;

/// Symmetric positive definite matrix stored by its lower envelope.
#[derive(Debug, Clone, Default)]
pub struct EnvelopeCholesky {
    /// `old_of[new]`
    old_of: Vec<usize>,
    /// `new_of[old]`
    new_of: Vec<usize>,
    first: Vec<usize>,
    ptr: Vec<usize>,
    vals: Vec<f64>,
    work: Vec<f64>,
}

/// Reverse Cuthill–McKee ordering of an undirected pattern.
pub fn reverse_cuthill_mckee(n: usize, pattern: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in pattern {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for list in adj.iter_mut() {
        list.sort_by_key(|&m| (degree[m], m));
    }

    let bfs_levels = |root: usize, seen: &[bool]| -> Vec<usize> {
        let mut level = vec![usize::MAX; n];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([root]);
        level[root] = 0;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &m in &adj[i] {
                if level[m] == usize::MAX && !seen[m] {
                    level[m] = level[i] + 1;
                    queue.push_back(m);
                }
            }
        }
        order
    };

    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(seed) = (0..n).filter(|&i| !seen[i]).min_by_key(|&i| (degree[i], i)) {
        // A couple of sweeps towards a pseudo-peripheral root.
        let mut root = seed;
        for _ in 0..2 {
            let comp = bfs_levels(root, &seen);
            let far = *comp.last().expect("component has a node");
            if far == root {
                break;
            }
            root = far;
        }
        let comp = bfs_levels(root, &seen);
        for &i in &comp {
            seen[i] = true;
        }
        order.extend(comp);
    }
    order.reverse();
    order
}

impl EnvelopeCholesky {
    /// Builds the symbolic structure for an `n`×`n` matrix whose
    /// off-diagonal nonzeros are given by `pattern`.
    pub fn new(n: usize, pattern: &[(usize, usize)]) -> Self {
        let old_of = reverse_cuthill_mckee(n, pattern);
        let mut new_of = vec![0; n];
        for (new, &old) in old_of.iter().enumerate() {
            new_of[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(a, b) in pattern {
            let (i, j) = (new_of[a], new_of[b]);
            let (r, c) = if i > j { (i, j) } else { (j, i) };
            first[r] = first[r].min(c);
        }
        let mut ptr = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            ptr.push(acc);
            acc += i - f + 1;
        }
        ptr.push(acc);
        EnvelopeCholesky {
            old_of,
            new_of,
            first,
            ptr,
            vals: vec![0.0; acc],
            work: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && c >= self.first[r]);
        self.ptr[r] + c - self.first[r]
    }

    pub fn add_diag(&mut self, i: usize, val: f64) {
        let r = self.new_of[i];
        let s = self.slot(r, r);
        self.vals[s] += val;
    }

    /// Adds `val` to the symmetric pair `(i, j)`, `(j, i)`.
    pub fn add_offdiag(&mut self, i: usize, j: usize, val: f64) {
        let (a, b) = (self.new_of[i], self.new_of[j]);
        let (r, c) = if a > b { (a, b) } else { (b, a) };
        let s = self.slot(r, c);
        self.vals[s] += val;
    }

    /// Overwrites the assembled matrix with its Cholesky factor.
    pub fn factor(&mut self) -> Result<(), NotPositiveDefinite> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let pi = self.ptr[i];
            for j in fi..i {
                let fj = self.first[j];
                let pj = self.ptr[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let ri = &self.vals[pi + k0 - fi..pi + k0 - fi + len];
                let rj = &self.vals[pj + k0 - fj..pj + k0 - fj + len];
                let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let diag_j = self.vals[pj + j - fj];
                let s = pi + j - fi;
                self.vals[s] = (self.vals[s] - dot) / diag_j;
            }
            let row = &self.vals[pi..pi + i - fi];
            let d = self.vals[pi + i - fi] - row.iter().map(|a| a * a).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite);
            }
            self.vals[pi + i - fi] = sqrt(d);
        }
        Ok(())
    }

    /// Solves `A x = b` in place using the stored factor.
    pub fn solve(&mut self, b: &mut [f64]) {
        let n = self.dim();
        let mut y = core::mem::take(&mut self.work);
        for (new, &old) in self.old_of.iter().enumerate() {
            y[new] = b[old];
        }
        for i in 0..n {
            let fi = self.first[i];
            let pi = self.ptr[i];
            let row = &self.vals[pi..pi + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.vals[pi + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let pi = self.ptr[i];
            let xi = y[i] / self.vals[pi + i - fi];
            y[i] = xi;
            let row = &self.vals[pi..pi + i - fi];
            for (yk, l) in y[fi..i].iter_mut().zip(row) {
                *yk -= l * xi;
            }
        }
        for (new, &old) in self.old_of.iter().enumerate() {
            b[old] = y[new];
        }
        self.work = y;
    }
}
