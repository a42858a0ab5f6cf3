//! Two-point boundary-value solver for first-order systems `y' = f(x, y)` on
//! `[a, b]`: collocation with the three-stage Lobatto IIIA formula (a C¹
//! piecewise cubic, 4th order at the nodes), damped Newton iteration and
//! residual-controlled mesh refinement.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait BvpSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, x: f64, y: &[f64], f: &mut [f64]);

    fn bc(&self, ya: &[f64], yb: &[f64], r: &mut [f64]);

    /// `df/dy`. Defaults to forward differences.
    fn jacobian(&self, x: f64, y: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.dim();
        let mut f0 = vec![0.0; m];
        let mut f1 = vec![0.0; m];
        self.rhs(x, y, &mut f0);
        let mut yp = y.to_vec();
        for c in 0..m {
            let h = 1e-8 * (1.0 + y[c].abs());
            yp[c] = y[c] + h;
            self.rhs(x, &yp, &mut f1);
            yp[c] = y[c];
            for r in 0..m {
                jac[(r, c)] = (f1[r] - f0[r]) / h;
            }
        }
    }

    /// Derivatives of the boundary residual. Defaults to forward differences.
    fn bc_jacobian(&self, ya: &[f64], yb: &[f64], ja: &mut DMatrix<f64>, jb: &mut DMatrix<f64>) {
        let m = self.dim();
        let mut r0 = vec![0.0; m];
        let mut r1 = vec![0.0; m];
        self.bc(ya, yb, &mut r0);
        let mut a = ya.to_vec();
        let mut b = yb.to_vec();
        for c in 0..m {
            let h = 1e-8 * (1.0 + ya[c].abs());
            a[c] = ya[c] + h;
            self.bc(&a, yb, &mut r1);
            a[c] = ya[c];
            for r in 0..m {
                ja[(r, c)] = (r1[r] - r0[r]) / h;
            }
            let h = 1e-8 * (1.0 + yb[c].abs());
            b[c] = yb[c] + h;
            self.bc(ya, &b, &mut r1);
            b[c] = yb[c];
            for r in 0..m {
                jb[(r, c)] = (r1[r] - r0[r]) / h;
            }
        }
    }

    /// `Some(k)` when the first `k` boundary residuals involve `y(a)` only
    /// and the remaining ones `y(b)` only. Enables the banded linear solver.
    fn separated(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    pub tol: f64,
    pub max_nodes: usize,
    pub max_newton: usize,
    /// Solve on the given mesh only, skipping residual control.
    pub fixed_mesh: bool,
}

impl BvpOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_nodes: 20_000, max_newton: 12, fixed_mesh: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub x: Vec<f64>,
    /// Node values, one vector per node.
    pub y: Vec<Vec<f64>>,
    /// `f(x, y)` at the nodes, the slopes of the cubic interpolant.
    pub yp: Vec<Vec<f64>>,
    /// Largest scaled RMS collocation residual over the intervals.
    pub residual: f64,
    pub newton_iterations: usize,
}

impl BvpSolution {
    fn interval(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(n - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(n - 2),
        }
    }

    /// Value and derivative of the collocation cubic at `x`.
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.interval(x);
        let h = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let (y0, y1, f0, f1) = (&self.y[k], &self.y[k + 1], &self.yp[k], &self.yp[k + 1]);
        let m = y0.len();
        let y = (0..m).map(|i| h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i]).collect();
        let d = (0..m).map(|i| d00 * y0[i] + d10 * f0[i] + d01 * y1[i] + d11 * f1[i]).collect();
        (y, d)
    }
}

/// Solves the problem starting from node values `guess` on `mesh`.
pub fn solve<S: BvpSystem + ?Sized>(
    sys: &S,
    mesh: Vec<f64>,
    guess: Vec<Vec<f64>>,
    opts: &BvpOptions,
) -> Result<BvpSolution> {
    let m = sys.dim();
    if m == 0 {
        return Err(Error::invalid("empty BVP system"));
    }
    if mesh.len() < 2 || mesh.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("BVP mesh must be strictly increasing with at least two nodes"));
    }
    if guess.len() != mesh.len() || guess.iter().any(|g| g.len() != m || g.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("initial guess must be finite and match mesh and dimension"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("BVP tolerance must be positive"));
    }
    let mut x = mesh;
    let mut y = guess;
    let mut total_newton = 0;
    loop {
        let (yp, iters) = newton(sys, &x, &mut y, opts)?;
        total_newton += iters;
        let sol = BvpSolution { x: x.clone(), y: y.clone(), yp, residual: 0.0, newton_iterations: total_newton };
        let rms = residuals(sys, &sol);
        let worst = rms.iter().cloned().fold(0.0, f64::max);
        if opts.fixed_mesh || worst <= opts.tol {
            return Ok(BvpSolution { residual: worst, ..sol });
        }
        let mut nx = Vec::with_capacity(x.len() * 2);
        let mut ny = Vec::with_capacity(x.len() * 2);
        for k in 0..x.len() - 1 {
            nx.push(x[k]);
            ny.push(y[k].clone());
            let h = x[k + 1] - x[k];
            let inserts: &[f64] = if rms[k] <= opts.tol {
                &[]
            } else if rms[k] < 100.0 * opts.tol {
                &[0.5]
            } else {
                &[1.0 / 3.0, 2.0 / 3.0]
            };
            for &s in inserts {
                let xi = x[k] + s * h;
                nx.push(xi);
                ny.push(sol.eval(xi).0);
            }
        }
        nx.push(*x.last().unwrap());
        ny.push(y.last().unwrap().clone());
        if nx.len() > opts.max_nodes {
            return Err(Error::BvpFailure {
                msg: format!("node budget of {} exhausted", opts.max_nodes),
                residual: worst,
            });
        }
        x = nx;
        y = ny;
    }
}

/// `n` equally spaced nodes on `[a, b]`.
pub fn uniform_mesh(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

struct Collocation {
    f: Vec<Vec<f64>>,
    fmid: Vec<Vec<f64>>,
    ymid: Vec<Vec<f64>>,
    res: Vec<f64>,
}

fn collocation<S: BvpSystem + ?Sized>(sys: &S, x: &[f64], y: &[Vec<f64>]) -> Collocation {
    let m = sys.dim();
    let n = x.len();
    let mut f = vec![vec![0.0; m]; n];
    for k in 0..n {
        sys.rhs(x[k], &y[k], &mut f[k]);
    }
    let mut fmid = vec![vec![0.0; m]; n - 1];
    let mut ymid = vec![vec![0.0; m]; n - 1];
    let mut res = vec![0.0; m + m * (n - 1)];
    sys.bc(&y[0], &y[n - 1], &mut res[..m]);
    for k in 0..n - 1 {
        let h = x[k + 1] - x[k];
        for i in 0..m {
            ymid[k][i] = 0.5 * (y[k][i] + y[k + 1][i]) - h / 8.0 * (f[k + 1][i] - f[k][i]);
        }
        sys.rhs(x[k] + 0.5 * h, &ymid[k], &mut fmid[k]);
        for i in 0..m {
            res[m + k * m + i] =
                y[k + 1][i] - y[k][i] - h / 6.0 * (f[k][i] + 4.0 * fmid[k][i] + f[k + 1][i]);
        }
    }
    Collocation { f, fmid, ymid, res }
}

fn newton<S: BvpSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    y: &mut [Vec<f64>],
    opts: &BvpOptions,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let m = sys.dim();
    let n = x.len();
    let mut col = collocation(sys, x, y);
    let norm = |c: &Collocation| c.res.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut current = norm(&col);
    for iter in 0..opts.max_newton {
        let scale = collocation_scale(&col, x, m);
        let delta = newton_step(sys, x, y, &col)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<Vec<f64>> = (0..n)
                .map(|k| (0..m).map(|i| y[k][i] - lambda * delta[k * m + i]).collect())
                .collect();
            let c = collocation(sys, x, &trial);
            let r = norm(&c);
            if r.is_finite() && (r <= (1.0 - 0.25 * lambda) * current || r <= 1e-13 * scale) {
                y.clone_from_slice(&trial);
                col = c;
                current = r;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            if current <= 1e-9 * scale {
                return Ok((col.f, iter + 1));
            }
            return Err(Error::BvpFailure { msg: "Newton iteration stalled".into(), residual: current });
        }
        let ymax = y.iter().flat_map(|v| v.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
        let dmax = delta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if current <= 1e-12 * scale || (lambda == 1.0 && dmax <= 1e-10 * (1.0 + ymax)) {
            return Ok((col.f, iter + 1));
        }
    }
    if current <= 1e-8 * collocation_scale(&col, x, m) {
        return Ok((col.f, opts.max_newton));
    }
    Err(Error::BvpFailure { msg: "Newton iteration did not converge".into(), residual: current })
}

fn collocation_scale(col: &Collocation, x: &[f64], m: usize) -> f64 {
    let span = x[x.len() - 1] - x[0];
    let fmax = col.f.iter().flat_map(|v| v.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
    (1.0 + fmax * span) * ((col.res.len() / m.max(1)) as f64).sqrt()
}

fn newton_step<S: BvpSystem + ?Sized>(sys: &S, x: &[f64], y: &[Vec<f64>], col: &Collocation) -> Result<Vec<f64>> {
    let m = sys.dim();
    let n = x.len();
    let id = DMatrix::<f64>::identity(m, m);
    let mut jk = DMatrix::zeros(m, m);
    let mut jk1 = DMatrix::zeros(m, m);
    let mut jmid = DMatrix::zeros(m, m);
    let mut ja = DMatrix::zeros(m, m);
    let mut jb = DMatrix::zeros(m, m);
    sys.bc_jacobian(&y[0], &y[n - 1], &mut ja, &mut jb);

    let mut blocks = Vec::with_capacity(n - 1);
    sys.jacobian(x[0], &y[0], &mut jk);
    for k in 0..n - 1 {
        let h = x[k + 1] - x[k];
        sys.jacobian(x[k + 1], &y[k + 1], &mut jk1);
        sys.jacobian(x[k] + 0.5 * h, &col.ymid[k], &mut jmid);
        let left = -&id - (h / 6.0) * (&jk + 4.0 * &jmid * (0.5 * &id + (h / 8.0) * &jk));
        let right = &id - (h / 6.0) * (&jk1 + 4.0 * &jmid * (0.5 * &id - (h / 8.0) * &jk1));
        blocks.push((left, right));
        std::mem::swap(&mut jk, &mut jk1);
    }
    let dim = m * n;

    match sys.separated() {
        Some(kl) if kl <= m => {
            // Rows: left conditions, interval equations, right conditions.
            let lower = (kl + m).saturating_sub(1).max(1);
            let upper = (2 * m - 1).saturating_sub(kl).max(1);
            let mut a = BandMatrix::zeros(dim, lower, upper);
            let mut rhs = vec![0.0; dim];
            for r in 0..kl {
                for c in 0..m {
                    a.set(r, c, ja[(r, c)]);
                }
                rhs[r] = col.res[r];
            }
            for (k, (left, right)) in blocks.iter().enumerate() {
                for i in 0..m {
                    let row = kl + k * m + i;
                    for c in 0..m {
                        a.set(row, k * m + c, left[(i, c)]);
                        a.set(row, (k + 1) * m + c, right[(i, c)]);
                    }
                    rhs[row] = col.res[m + k * m + i];
                }
            }
            for r in kl..m {
                let row = kl + (n - 1) * m + (r - kl);
                for c in 0..m {
                    a.set(row, (n - 1) * m + c, jb[(r, c)]);
                }
                rhs[row] = col.res[r];
            }
            a.solve_in_place(&mut rhs)?;
            Ok(rhs)
        }
        _ => {
            let mut a = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (k, (left, right)) in blocks.iter().enumerate() {
                a.view_mut((k * m, k * m), (m, m)).copy_from(left);
                a.view_mut((k * m, (k + 1) * m), (m, m)).copy_from(right);
                for i in 0..m {
                    rhs[k * m + i] = col.res[m + k * m + i];
                }
            }
            let r0 = (n - 1) * m;
            a.view_mut((r0, 0), (m, m)).copy_from(&ja);
            a.view_mut((r0, (n - 1) * m), (m, m)).copy_from(&jb);
            for i in 0..m {
                rhs[r0 + i] = col.res[i];
            }
            let sol = a.lu().solve(&rhs).ok_or_else(|| Error::Singular("collocation Jacobian".into()))?;
            Ok(sol.iter().copied().collect())
        }
    }
}

/// Scaled RMS residual of the collocation cubic per interval, estimated with
/// 5-point Lobatto quadrature (the residual vanishes at both ends).
fn residuals<S: BvpSystem + ?Sized>(sys: &S, sol: &BvpSolution) -> Vec<f64> {
    let m = sys.dim();
    let n = sol.x.len();
    let col = collocation(sys, &sol.x, &sol.y);
    let s = 0.5 * (3.0f64 / 7.0).sqrt();
    let mut f = vec![0.0; m];
    let mut out = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let h = sol.x[k + 1] - sol.x[k];
        let mut r_mid = 0.0;
        for i in 0..m {
            let r = 1.5 * col.res[m + k * m + i] / h;
            r_mid += (r / (1.0 + col.fmid[k][i].abs())).powi(2);
        }
        let mut r_side = 0.0;
        for off in [0.5 - s, 0.5 + s] {
            let xi = sol.x[k] + off * h;
            let (yv, dv) = sol.eval(xi);
            sys.rhs(xi, &yv, &mut f);
            for i in 0..m {
                r_side += ((dv[i] - f[i]) / (1.0 + f[i].abs())).powi(2);
            }
        }
        out.push((0.5 * (32.0 / 45.0 * r_mid + 49.0 / 90.0 * r_side)).sqrt());
    }
    out
}

/// Banded matrix with room for the fill-in of partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        // Row r stores columns r - kl ..= r + kl + ku.
        r * self.width + (c + self.kl - r)
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(c + self.kl >= r && c <= r + self.ku, "entry ({r}, {c}) outside the band");
        let i = self.idx(r, c);
        self.data[i] = v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c > r + self.kl + self.ku {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// Gaussian elimination with partial pivoting applied to `rhs` as it
    /// goes, then back substitution. Consumes the factorization.
    pub fn solve_in_place(&mut self, rhs: &mut [f64]) -> Result<()> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.get(j, j).abs();
            for r in j + 1..=last_row {
                let v = self.get(r, j).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= 1e-14 * scale {
                return Err(Error::Singular(format!("banded system, column {j}")));
            }
            let last_col = (j + kl + ku).min(n - 1);
            if p != j {
                for c in j..=last_col {
                    let (a, b) = (self.idx(j, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
                rhs.swap(j, p);
            }
            let piv = self.get(j, j);
            for r in j + 1..=last_row {
                let l = self.get(r, j) / piv;
                if l == 0.0 {
                    continue;
                }
                let i = self.idx(r, j);
                self.data[i] = 0.0;
                for c in j + 1..=last_col {
                    let src = self.data[self.idx(j, c)];
                    let dst = self.idx(r, c);
                    self.data[dst] -= l * src;
                }
                rhs[r] -= l * rhs[j];
            }
        }
        for j in (0..n).rev() {
            let last_col = (j + kl + ku).min(n - 1);
            let mut s = rhs[j];
            for c in j + 1..=last_col {
                s -= self.get(j, c) * rhs[c];
            }
            rhs[j] = s / self.get(j, j);
        }
        Ok(())
    }
}
