#![allow(dead_code)]

/// Small deterministic generator for test instances.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(1);
        ipslab::rng::splitmix64(self.0)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Bounded-Lipschitz distance between two atomic measures from the dual LP,
/// solved by a dense tableau simplex with Bland's rule.
///
/// With `psi = phi + 1` the problem is `max sum b_i psi_i` subject to
/// `psi_i - psi_j <= |x_i - x_j|`, `psi_i <= 2` and `psi >= 0`; the origin is
/// feasible so no phase one is needed. `sum b = 0` makes the shift free.
pub fn lp_oracle(d: usize, pa: &[f64], wa: &[f64], pb: &[f64], wb: &[f64]) -> f64 {
    let mut pts: Vec<&[f64]> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for (i, w) in wa.iter().enumerate() {
        pts.push(&pa[i * d..(i + 1) * d]);
        b.push(*w);
    }
    for (i, w) in wb.iter().enumerate() {
        pts.push(&pb[i * d..(i + 1) * d]);
        b.push(-*w);
    }
    let n = pts.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let c = pts[i].iter().zip(pts[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                a[j] = -1.0;
                rows.push((a, c));
            }
        }
        let mut a = vec![0.0; n];
        a[i] = 1.0;
        rows.push((a, 2.0));
    }
    let m = rows.len();
    let cols = n + m;
    // tableau rows: [A | I | rhs]
    let mut t: Vec<Vec<f64>> = rows
        .into_iter()
        .enumerate()
        .map(|(k, (a, c))| {
            let mut r = vec![0.0; cols + 1];
            r[..n].copy_from_slice(&a);
            r[n + k] = 1.0;
            r[cols] = c;
            r
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    // objective row holds reduced profits
    let mut z = vec![0.0; cols + 1];
    z[..n].copy_from_slice(&b);
    for _ in 0..100_000 {
        let Some(enter) = (0..cols).find(|&j| z[j] > 1e-12) else {
            return -z[cols];
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..m {
            if t[r][enter] > 1e-12 {
                let ratio = t[r][cols] / t[r][enter];
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[r] < basis[l]),
                };
                if better {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let r = leave.expect("bounded problem");
        let piv = t[r][enter];
        for v in t[r].iter_mut() {
            *v /= piv;
        }
        let prow = t[r].clone();
        for (k, row) in t.iter_mut().enumerate() {
            if k != r && row[enter] != 0.0 {
                let f = row[enter];
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
            }
        }
        let f = z[enter];
        for (v, p) in z.iter_mut().zip(&prow) {
            *v -= f * p;
        }
        basis[r] = enter;
    }
    panic!("oracle simplex did not terminate");
}

/// Random atomic probability measure with up to `max_atoms` atoms in `[-2, 2]^d`.
pub fn random_measure(rng: &mut TestRng, d: usize, max_atoms: usize) -> (Vec<f64>, Vec<f64>) {
    let k = 1 + rng.below(max_atoms);
    let pts: Vec<f64> = (0..k * d).map(|_| rng.range(-2.0, 2.0)).collect();
    let mut w: Vec<f64> = (0..k).map(|_| rng.range(0.05, 1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    // absorb rounding so the weights pass the strict normalization check
    let rest: f64 = w[1..].iter().sum();
    w[0] = 1.0 - rest;
    (pts, w)
}
