//! Kantorovich-Rubinstein (bounded-Lipschitz) distance.
//!
//! The dual problem `max sum phi_i (mu_i - nu_i)` over `|phi_i| <= 1` and
//! `phi_i - phi_j <= c_ij` is the LP dual of an uncapacitated min-cost flow
//! with supplies `mu - nu`: arcs between atoms cost `c_ij`, and one extra hub
//! node joined to every atom at cost 1 in both directions encodes the bound
//! `|phi| <= 1`. The flow problem is solved exactly by a primal network
//! simplex, so no iteration tolerance is involved.

use thiserror::Error;

use crate::grid::GridField;
use crate::measures::WeightedPointSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrError {
    #[error("not a probability measure: {0}")]
    NonProbability(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("network simplex did not reach an optimal basis: {0}")]
    NoConvergence(String),
}

/// Either argument of the distance.
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    Points(&'a WeightedPointSet),
    /// Density on a grid; each node carries its cell mass.
    Grid(&'a GridField),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrOptions {
    /// Up to this many distinct atoms the complete graph with Euclidean costs
    /// is used and the distance is exact.
    pub exact_atoms: usize,
    /// Cells per axis of the coarse binning grid used beyond `exact_atoms`.
    pub resolution: usize,
}

impl Default for KrOptions {
    fn default() -> Self {
        Self { exact_atoms: 64, resolution: 64 }
    }
}

/// Atoms dropped below this mass when flattening grid densities.
const MASS_FLOOR: f64 = 1e-15;

fn atoms(m: Measure<'_>) -> Result<(usize, Vec<f64>, Vec<f64>), KrError> {
    match m {
        Measure::Points(p) => Ok((p.d, p.points.clone(), p.weights.clone())),
        Measure::Grid(f) => {
            let spec = f.spec;
            let cell = spec.cell_volume();
            let scale = f.max_abs();
            if f.min() < -1e-6 * scale {
                return Err(KrError::NonProbability(format!("grid density has negative values down to {}", f.min())));
            }
            let mut pts = Vec::new();
            let mut w = Vec::new();
            let mut x = [0.0; 3];
            for (idx, &v) in f.values.iter().enumerate() {
                let m = v.max(0.0) * cell;
                if m > MASS_FLOOR {
                    spec.node(idx, &mut x[..spec.d]);
                    pts.extend_from_slice(&x[..spec.d]);
                    w.push(m);
                }
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(KrError::NonProbability(format!("grid density has mass {total}")));
            }
            w.iter_mut().for_each(|v| *v /= total);
            Ok((spec.d, pts, w))
        }
    }
}

/// Distance between two probability measures.
pub fn kr_distance(mu: Measure<'_>, nu: Measure<'_>, opts: &KrOptions) -> Result<f64, KrError> {
    let (d, pa, wa) = atoms(mu)?;
    let (d2, pb, wb) = atoms(nu)?;
    if d != d2 {
        return Err(KrError::DimensionMismatch(d, d2));
    }
    for w in [&wa, &wb] {
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(KrError::NonProbability(format!("total mass {total}")));
        }
    }
    // merge atoms at identical locations into one signed supply
    let mut entries: Vec<(Vec<f64>, f64)> = Vec::with_capacity(wa.len() + wb.len());
    for (i, w) in wa.iter().enumerate() {
        entries.push((pa[i * d..(i + 1) * d].to_vec(), *w));
    }
    for (i, w) in wb.iter().enumerate() {
        entries.push((pb[i * d..(i + 1) * d].to_vec(), -*w));
    }
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite coordinates"));
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let mut supply: Vec<f64> = Vec::new();
    for (p, s) in entries {
        match pts.last() {
            Some(last) if *last == p => *supply.last_mut().unwrap() += s,
            _ => {
                pts.push(p);
                supply.push(s);
            }
        }
    }
    if supply.iter().all(|s| *s == 0.0) {
        return Ok(0.0);
    }
    if pts.len() <= opts.exact_atoms {
        let mut arcs = Vec::new();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i != j {
                    let c = euclid(&pts[i], &pts[j]);
                    arcs.push((i, j, c));
                }
            }
        }
        return solve_with_hub(supply, arcs);
    }
    binned_distance(d, &pts, &supply, opts.resolution)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Bin the signed supplies onto a cubic-cell grid over their bounding box
/// and connect axis neighbours at cost equal to the cell width.
fn binned_distance(d: usize, pts: &[Vec<f64>], supply: &[f64], resolution: usize) -> Result<f64, KrError> {
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in pts {
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..d).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let resolution = resolution.max(1);
    // Use a whole multiple of the finest coordinate spacing so atoms that
    // already sit on a lattice, such as grid fields, land on distinct bins.
    let mut spacing = f64::INFINITY;
    for a in 0..d {
        let mut c: Vec<f64> = pts.iter().map(|p| p[a]).collect();
        c.sort_by(f64::total_cmp);
        for w in c.windows(2) {
            let gap = w[1] - w[0];
            if gap > 1e-12 * extent {
                spacing = spacing.min(gap);
            }
        }
    }
    let h = if extent <= 0.0 {
        1.0
    } else if spacing.is_finite() {
        spacing * (extent / (resolution as f64 * spacing)).ceil().max(1.0)
    } else {
        extent / resolution as f64
    };
    let dims: Vec<usize> = (0..d).map(|a| (((hi[a] - lo[a]) / h).floor() as usize + 1).min(resolution + 1)).collect();
    let ncell: usize = dims.iter().product();
    let mut cell_supply = vec![0.0; ncell];
    for (p, s) in pts.iter().zip(supply) {
        let mut idx = 0;
        for a in 0..d {
            let i = (((p[a] - lo[a]) / h).round() as usize).min(dims[a] - 1);
            idx = idx * dims[a] + i;
        }
        cell_supply[idx] += s;
    }
    let mut arcs = Vec::new();
    let mut stride = 1;
    for a in (0..d).rev() {
        for idx in 0..ncell {
            let coord = (idx / stride) % dims[a];
            if coord + 1 < dims[a] {
                arcs.push((idx, idx + stride, h));
                arcs.push((idx + stride, idx, h));
            }
        }
        stride *= dims[a];
    }
    solve_with_hub(cell_supply, arcs)
}

fn solve_with_hub(supply: Vec<f64>, mut arcs: Vec<(usize, usize, f64)>) -> Result<f64, KrError> {
    let n = supply.len();
    let hub = n;
    for i in 0..n {
        arcs.push((i, hub, 1.0));
        arcs.push((hub, i, 1.0));
    }
    let mut b = supply;
    b.push(0.0);
    NetworkSimplex::new(b, arcs).solve()
}

/// Primal network simplex for uncapacitated min-cost flow with an
/// artificial root and Cunningham's strongly feasible leaving-arc rule.
struct NetworkSimplex {
    n: usize,
    tail: Vec<usize>,
    head: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    real_arcs: usize,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    root: usize,
}

const NONE: usize = usize::MAX;

impl NetworkSimplex {
    fn new(b: Vec<f64>, arcs: Vec<(usize, usize, f64)>) -> Self {
        let n = b.len();
        let root = n;
        let real_arcs = arcs.len();
        let max_cost = arcs.iter().map(|a| a.2).fold(0.0, f64::max);
        // any unit can be routed through the hub at cost 2, so artificial
        // arcs priced well above that are never used at an optimum
        let big = 10.0 * (2.0 + max_cost);
        let mut tail = Vec::with_capacity(real_arcs + n);
        let mut head = Vec::with_capacity(real_arcs + n);
        let mut cost = Vec::with_capacity(real_arcs + n);
        for (t, h, c) in arcs {
            tail.push(t);
            head.push(h);
            cost.push(c);
        }
        let mut flow = vec![0.0; real_arcs];
        let mut parent = vec![root; n + 1];
        let mut parent_arc = vec![NONE; n + 1];
        parent[root] = NONE;
        for (i, &bi) in b.iter().enumerate() {
            let e = tail.len();
            // zero-flow artificial arcs point away from the root so the
            // initial tree is strongly feasible
            if bi > 0.0 {
                tail.push(i);
                head.push(root);
                flow.push(bi);
            } else {
                tail.push(root);
                head.push(i);
                flow.push(-bi);
            }
            cost.push(big);
            parent_arc[i] = e;
        }
        let mut s = Self {
            n: n + 1,
            tail,
            head,
            cost,
            flow,
            real_arcs,
            parent,
            parent_arc,
            depth: vec![0; n + 1],
            pot: vec![0.0; n + 1],
            root,
        };
        s.recompute_tree();
        s
    }

    /// Depths and potentials from the parent structure (`c_e + pot_tail - pot_head = 0` on tree arcs).
    fn recompute_tree(&mut self) {
        let n = self.n;
        let mut count = vec![0usize; n + 1];
        for v in 0..n {
            if self.parent[v] != NONE {
                count[self.parent[v] + 1] += 1;
            }
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut children = vec![0usize; n];
        let mut fill = count.clone();
        for v in 0..n {
            let p = self.parent[v];
            if p != NONE {
                children[fill[p]] = v;
                fill[p] += 1;
            }
        }
        let mut queue = Vec::with_capacity(n);
        queue.push(self.root);
        self.depth[self.root] = 0;
        self.pot[self.root] = 0.0;
        let mut qi = 0;
        while qi < queue.len() {
            let p = queue[qi];
            qi += 1;
            for &c in &children[count[p]..count[p + 1]] {
                let e = self.parent_arc[c];
                self.depth[c] = self.depth[p] + 1;
                self.pot[c] = if self.tail[e] == c { self.pot[p] - self.cost[e] } else { self.pot[p] + self.cost[e] };
                queue.push(c);
            }
        }
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        self.cost[e] + self.pot[self.tail[e]] - self.pot[self.head[e]]
    }

    fn solve(mut self) -> Result<f64, KrError> {
        let m = self.tail.len();
        let block = ((m as f64).sqrt().ceil() as usize).max(16);
        let mut start = 0usize;
        let max_pivots = 200 * m + 10_000;
        let scale = self.cost.iter().take(self.real_arcs).fold(1.0, |a: f64, c| a.max(*c));
        let eps = 1e-12 * scale;
        for _ in 0..max_pivots {
            // block search pricing
            let mut best = NONE;
            let mut best_rc = -eps;
            let mut scanned = 0;
            let mut e = start;
            while scanned < m {
                let rc = self.reduced_cost(e);
                if rc < best_rc {
                    best_rc = rc;
                    best = e;
                }
                scanned += 1;
                e += 1;
                if e == m {
                    e = 0;
                }
                if scanned % block == 0 && best != NONE {
                    break;
                }
            }
            start = e;
            if best == NONE {
                return self.finish();
            }
            self.pivot(best);
        }
        Err(KrError::NoConvergence(format!("pivot limit {max_pivots} reached")))
    }

    fn pivot(&mut self, e: usize) {
        let u = self.tail[e];
        let v = self.head[e];
        // walk both ends up to the apex of the cycle
        let mut a = u;
        let mut b = v;
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        let apex = a;
        // The cycle is oriented along e: u -> v, then up from v to the apex,
        // then down from the apex to u. Backward arcs carry the constraint.
        let mut delta = f64::INFINITY;
        // leaving candidate: (node whose parent arc leaves, side)
        let mut leave: Option<(usize, bool)> = None;
        // v side, traversed upward, which is the end of the cycle order: the
        // last blocking arc is the one closest to the apex
        let mut x = v;
        while x != apex {
            let pe = self.parent_arc[x];
            let backward = self.head[pe] == x; // arc points down, cycle goes up
            if backward && self.flow[pe] <= delta {
                delta = self.flow[pe];
                leave = Some((x, true));
            }
            x = self.parent[x];
        }
        // u side, traversed from the apex down to u, comes first in the cycle
        // order; only a strictly smaller value displaces a v-side choice, and
        // among ties the arc closest to u is last
        let mut path = Vec::new();
        let mut x = u;
        while x != apex {
            path.push(x);
            x = self.parent[x];
        }
        for &x in path.iter().rev() {
            let pe = self.parent_arc[x];
            let backward = self.tail[pe] == x; // arc points up, cycle goes down
            if backward {
                let f = self.flow[pe];
                let better = match leave {
                    Some((_, true)) => f < delta,
                    _ => f <= delta,
                };
                if better {
                    delta = f;
                    leave = Some((x, false));
                }
            }
        }
        let (q, on_v_side) = leave.expect("uncapacitated cycles with positive costs are bounded");
        // augment
        if delta > 0.0 {
            self.flow[e] += delta;
            let mut x = v;
            while x != apex {
                let pe = self.parent_arc[x];
                if self.tail[pe] == x {
                    self.flow[pe] += delta;
                } else {
                    self.flow[pe] -= delta;
                }
                x = self.parent[x];
            }
            let mut x = u;
            while x != apex {
                let pe = self.parent_arc[x];
                if self.head[pe] == x {
                    self.flow[pe] += delta;
                } else {
                    self.flow[pe] -= delta;
                }
                x = self.parent[x];
            }
        }
        // re-hang the subtree below the leaving arc from the entering arc
        let (start, new_parent) = if on_v_side { (v, u) } else { (u, v) };
        let mut x = start;
        let mut np = new_parent;
        let mut na = e;
        loop {
            let op = self.parent[x];
            let oa = self.parent_arc[x];
            self.parent[x] = np;
            self.parent_arc[x] = na;
            if x == q {
                break;
            }
            np = x;
            na = oa;
            x = op;
        }
        self.recompute_tree();
    }

    fn finish(self) -> Result<f64, KrError> {
        let artificial: f64 = self.flow[self.real_arcs..].iter().sum();
        if artificial > 1e-9 {
            return Err(KrError::NoConvergence(format!("artificial flow {artificial} remains")));
        }
        Ok(self.flow[..self.real_arcs].iter().zip(&self.cost).map(|(f, c)| f * c).sum())
    }
}
