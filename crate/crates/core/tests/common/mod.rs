//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use llvg::black::norm_pdf;
use llvg::LocalVarianceGrid;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Density of `F exp(sigma W_T - sigma^2 T / 2)`.
pub fn lognormal_density(x: f64, forward: f64, vol: f64, tau: f64) -> f64 {
    let sd = vol * tau.sqrt();
    let mean = forward.ln() - 0.5 * sd * sd;
    norm_pdf((x.ln() - mean) / sd) / (x * sd)
}

/// Random grid with `m` interior knots on roughly `[0.4, 2.5]`, the forward
/// among them, and node values between `lo` and `hi` times the knot.
pub fn random_grid<R: Rng>(rng: &mut R, m: usize, lo: f64, hi: f64) -> LocalVarianceGrid {
    let mut knots: Vec<f64> = Vec::with_capacity(m + 2);
    knots.push(rng.gen_range(0.3..0.6));
    let mut x = knots[0];
    for _ in 0..=m {
        x += rng.gen_range(0.05..0.3);
        knots.push(x);
    }
    let s = rng.gen_range(1..=m);
    let mut alphas: Vec<f64> = knots.iter().map(|&k| k * rng.gen_range(lo..hi)).collect();
    // exercise the constant-segment branch now and then
    if rng.gen_bool(0.3) {
        let i = rng.gen_range(0..alphas.len() - 1);
        alphas[i + 1] = alphas[i];
    }
    LocalVarianceGrid::new(knots, alphas, s).expect("valid random grid")
}

/// Solution `chi (c cosh(w z) + s sinh(w z))` on one interval with `a`
/// linear from `a0` at `x0` to `a1` at `x1`, written out from scratch.
#[derive(Debug, Clone, Copy)]
pub struct Piece {
    pub x0: f64,
    pub a0: f64,
    pub q: f64,
    pub omega: f64,
    pub constant: bool,
}

impl Piece {
    pub fn new(x0: f64, x1: f64, a0: f64, a1: f64, tau: f64) -> Self {
        if a0 == a1 {
            return Self {
                x0,
                a0,
                q: 0.0,
                omega: (2.0 / tau).sqrt() / a0,
                constant: true,
            };
        }
        let q = (a1 - a0) / (x1 - x0);
        Self {
            x0,
            a0,
            q,
            omega: 0.5 * (1.0 + 8.0 / (q * q * tau)).sqrt(),
            constant: false,
        }
    }

    /// Value and derivative per unit `c` and per unit `s`.
    pub fn basis(&self, x: f64) -> ([f64; 2], [f64; 2]) {
        let w = self.omega;
        if self.constant {
            let t = w * (x - self.x0);
            return ([t.cosh(), t.sinh()], [w * t.sinh(), w * t.cosh()]);
        }
        let a = self.a0 + self.q * (x - self.x0);
        let chi = (a / self.a0).sqrt();
        let t = w * (a / self.a0).ln();
        let (ch, sh) = (t.cosh(), t.sinh());
        let g = self.q / a * chi;
        ([chi * ch, chi * sh], [g * (0.5 * ch + w * sh), g * (0.5 * sh + w * ch)])
    }
}

/// `W` on the grid with `W(L) = W(U) = 0`, continuous, and with derivative
/// dropping by `jumps[j]` at interior knot `j`, from one dense linear solve
/// over the raw hyperbolic coefficients.
pub struct DenseSolution {
    pub knots: Vec<f64>,
    pub pieces: Vec<Piece>,
    pub coeffs: Vec<(f64, f64)>,
}

impl DenseSolution {
    pub fn solve(grid: &LocalVarianceGrid, tau: f64, jumps: &[f64]) -> Self {
        let m = grid.knots.len() - 2;
        let pieces: Vec<Piece> = (0..=m)
            .map(|i| {
                Piece::new(
                    grid.knots[i],
                    grid.knots[i + 1],
                    grid.alphas[i],
                    grid.alphas[i + 1],
                    tau,
                )
            })
            .collect();
        let n = 2 * (m + 1);
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        a[(0, 0)] = 1.0;
        for j in 1..=m {
            let x = grid.knots[j];
            let (vl, dl) = pieces[j - 1].basis(x);
            let (vr, dr) = pieces[j].basis(x);
            let (r1, r2) = (2 * j - 1, 2 * j);
            for k in 0..2 {
                a[(r1, 2 * (j - 1) + k)] = vl[k];
                a[(r1, 2 * j + k)] = -vr[k];
                a[(r2, 2 * (j - 1) + k)] = dl[k];
                a[(r2, 2 * j + k)] = -dr[k];
            }
            b[r2] = jumps[j];
        }
        let (v, _) = pieces[m].basis(grid.knots[m + 1]);
        a[(n - 1, n - 2)] = v[0];
        a[(n - 1, n - 1)] = v[1];
        let sol = a.lu().solve(&b).expect("dense system is regular");
        Self {
            knots: grid.knots.clone(),
            pieces,
            coeffs: sol.as_slice().chunks(2).map(|p| (p[0], p[1])).collect(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = (self.knots.partition_point(|&k| k <= x).max(1) - 1).min(self.pieces.len() - 1);
        let (v, _) = self.pieces[i].basis(x);
        self.coeffs[i].0 * v[0] + self.coeffs[i].1 * v[1]
    }
}

/// `min 1/2 x'Qx + c'x` subject to `Ax <= b` by trying every set of at
/// most `n` active constraints.
pub fn brute_force_qp(q: &DMatrix<f64>, c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = c.len();
    let p = a.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let scale = 1.0 + b.amax();
    for mask in 0u32..(1 << p) {
        let active: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        let mut rhs = DVector::<f64>::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(q);
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b[i];
        }
        for j in 0..n {
            rhs[j] = -c[j];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let feasible = (a * &x - b).iter().all(|&v| v <= 1e-10 * scale);
        let dual_ok = sol.rows(n, k).iter().all(|&l| l >= -1e-10);
        if !(feasible && dual_ok && x.iter().all(|v| v.is_finite())) {
            continue;
        }
        let obj = 0.5 * x.dot(&(q * &x)) + c.dot(&x);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Random strictly convex QP with `n` variables and `p` constraints that
/// is feasible by construction.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let a = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b = &a * &x0 + DVector::from_fn(p, |_, _| rng.gen_range(0.0..0.5));
    (q, c, a, b)
}
