//! Symmetric banded storage, Cholesky factorization, and a reverse
//! Cuthill-McKee ordering that exposes the band of stage-structured problems.

use std::collections::VecDeque;

/// Lower band of a symmetric matrix: entry `(i, j)` with `i - b <= j <= i`.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to `(i, j)`; only the lower triangle is stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Zeroes row and column `i` and puts 1 on the diagonal.
    pub fn pin(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
        for r in i + 1..(i + self.bw + 1).min(self.n) {
            let k = self.idx(r, i);
            self.data[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.data[k] = 1.0;
    }

    /// In-place Cholesky `A = L L^T`; returns `false` if a pivot is not
    /// positive.
    pub fn factor(&mut self) -> bool {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut s = self.data[self.idx(j, j)];
            for k in lo..j {
                let l = self.data[self.idx(j, k)];
                s -= l * l;
            }
            if !(s > 0.0) || !s.is_finite() {
                return false;
            }
            let d = s.sqrt();
            let jj = self.idx(j, j);
            self.data[jj] = d;
            for i in j + 1..(j + bw + 1).min(n) {
                let lo_i = i.saturating_sub(bw);
                let mut s = self.data[self.idx(i, j)];
                for k in lo_i.max(lo)..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let ij = self.idx(i, j);
                self.data[ij] = s / d;
            }
        }
        true
    }

    /// Solves `L L^T x = b` in place after [`factor`](Self::factor).
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for r in i + 1..(i + bw + 1).min(n) {
                s -= self.data[self.idx(r, i)] * b[r];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

/// Reverse Cuthill-McKee ordering of a graph given as groups of mutually
/// coupled vertices. Returns `perm` with `perm[vertex] = new position`.
pub fn rcm_order(n: usize, groups: &[Vec<usize>]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for g in groups {
        for &a in g {
            for &b in g {
                if a != b {
                    adj[a].push(b);
                }
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = peripheral(start, &adj);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    let mut perm = vec![0; n];
    for (pos, &v) in order.iter().enumerate() {
        perm[v] = pos;
    }
    perm
}

/// Pseudo-peripheral vertex of the component containing `start`.
fn peripheral(start: usize, adj: &[Vec<usize>]) -> usize {
    let mut root = start;
    let mut best_depth = 0;
    for _ in 0..4 {
        let (far, depth) = bfs_far(root, adj);
        if depth <= best_depth {
            break;
        }
        best_depth = depth;
        root = far;
    }
    root
}

fn bfs_far(start: usize, adj: &[Vec<usize>]) -> (usize, usize) {
    let mut dist = std::collections::HashMap::new();
    dist.insert(start, 0usize);
    let mut queue = VecDeque::from([start]);
    let mut far = (start, 0);
    while let Some(v) = queue.pop_front() {
        let d = dist[&v];
        if d > far.1 || (d == far.1 && adj[v].len() < adj[far.0].len()) {
            far = (v, d);
        }
        for &w in &adj[v] {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                queue.push_back(w);
            }
        }
    }
    far
}

/// Half bandwidth of the coupling groups under `perm`.
pub fn bandwidth(groups: &[Vec<usize>], perm: &[usize]) -> usize {
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let (lo, hi) = g
                .iter()
                .fold((usize::MAX, 0), |(lo, hi), &v| (lo.min(perm[v]), hi.max(perm[v])));
            hi - lo
        })
        .max()
        .unwrap_or(0)
}
