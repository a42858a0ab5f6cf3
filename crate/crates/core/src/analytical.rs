//! Series solution of the two-layer slab with zero temperature at both
//! ends. The reference for verifying the reduced models.
//!
//! Layer `i` carries `u_tau = Fo_i u_chichi` on `chi in [0, 1]`, joined by
//! `u1(1) = u2(0)` and `u1_chi(1) = kappa u2_chi(0)`. Separation gives
//! `phi1 = A1 cos(b chi) + B1 sin(b chi)` and
//! `phi2 = A2 cos(F b chi) + B2 sin(F b chi)` with `F = sqrt(Fo1 / Fo2)`,
//! decaying as `exp(-Fo1 b^2 tau)`.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix4};

use crate::domain::{DimensionlessProblem, SurfaceCondition};
use crate::error::{Error, Result};
use crate::field::{FieldSolution, LayerField, ModelKind};

/// `tan(F b) + kappa F tan(b)`.
pub fn residual(fo_bar: f64, kappa: f64, beta: f64) -> f64 {
    (fo_bar * beta).tan() + kappa * fo_bar * beta.tan()
}

/// The same condition multiplied through by `cos(b) cos(F b)`; free of poles.
pub fn pole_free_residual(fo_bar: f64, kappa: f64, beta: f64) -> f64 {
    (fo_bar * beta).sin() * beta.cos() + kappa * fo_bar * beta.sin() * (fo_bar * beta).cos()
}

fn check_ratios(fo_bar: f64, kappa: f64) -> Result<()> {
    if !(fo_bar > 0.0 && fo_bar.is_finite() && kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("Fo ratio and kappa must be positive and finite"));
    }
    Ok(())
}

/// Cap on the number of pole intervals visited before giving up.
const SCAN_BUDGET: usize = 1_000_000;

/// First `n_modes` positive roots, ascending.
///
/// The poles of both tangents are merged into one sorted grid. On each gap
/// between neighbouring poles the residual rises monotonically from minus to
/// plus infinity, so it holds exactly one root, found by bisection on the
/// pole-free form.
pub fn transcendental_roots(fo_bar: f64, kappa: f64, n_modes: usize) -> Result<Vec<f64>> {
    check_ratios(fo_bar, kappa)?;
    if n_modes == 0 {
        return Err(Error::invalid("at least one mode required"));
    }
    let pole = |k: usize, scale: f64| (k as f64 + 0.5) * std::f64::consts::PI / scale;
    let (mut ka, mut kb) = (0usize, 0usize);
    let mut next_pole = || {
        let (pa, pb) = (pole(ka, 1.0), pole(kb, fo_bar));
        if (pa - pb).abs() <= 1e-12 * pa {
            ka += 1;
            kb += 1;
            pa.min(pb)
        } else if pa < pb {
            ka += 1;
            pa
        } else {
            kb += 1;
            pb
        }
    };
    let mut roots = Vec::with_capacity(n_modes);
    // (0, first pole) only holds the trivial root.
    let mut lo = next_pole();
    for _ in 0..SCAN_BUDGET {
        if roots.len() == n_modes {
            break;
        }
        let hi = next_pole();
        roots.push(root_between(fo_bar, kappa, lo, hi));
        lo = hi;
    }
    if roots.len() < n_modes {
        return Err(Error::RootShortfall { found: roots.len(), requested: n_modes });
    }
    Ok(roots)
}

fn root_between(fo_bar: f64, kappa: f64, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    // cos(b) cos(F b) keeps one sign inside the gap.
    let s = (mid.cos() * (fo_bar * mid).cos()).signum();
    let g = |b: f64| s * pole_free_residual(fo_bar, kappa, b);
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if g(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    if g(a).abs() < g(b).abs() {
        a
    } else {
        b
    }
}

/// Coefficients of one eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeShape {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

/// Scale fixed by `A2 = 1`. Where `sin(b)` vanishes the interface value is
/// zero and the scale moves to `B1 = 1` instead.
pub fn mode_shapes(beta: &[f64], fo_bar: f64, kappa: f64) -> Result<Vec<ModeShape>> {
    check_ratios(fo_bar, kappa)?;
    beta.iter()
        .map(|&b| {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid("eigenvalues must be positive"));
            }
            let (s, c) = b.sin_cos();
            if s.abs() > 1e-8 {
                Ok(ModeShape { a1: 0.0, b1: 1.0 / s, a2: 1.0, b2: c / (s * kappa * fo_bar) })
            } else {
                Ok(ModeShape { a1: 0.0, b1: 1.0, a2: s, b2: c / (kappa * fo_bar) })
            }
        })
        .collect()
}

/// Matrix of the four conditions acting on `(A1, B1, A2, B2)`: left end,
/// continuity, flux (divided by `b`), right end. Singular at eigenvalues.
pub fn mode_matrix(beta: f64, fo_bar: f64, kappa: f64) -> Matrix4<f64> {
    let (s, c) = beta.sin_cos();
    let (s2, c2) = (fo_bar * beta).sin_cos();
    Matrix4::new(1.0, 0.0, 0.0, 0.0, c, s, -1.0, 0.0, -s, c, 0.0, -kappa * fo_bar, 0.0, 0.0, c2, s2)
}

/// `w2 = sqrt(c2 (1 - l2) / (c1 l2))` with `l2` the interface position as a
/// fraction of the total thickness; `w1 = 1`.
pub fn tittle_weight(c1: f64, c2: f64, interface_fraction: f64) -> Result<f64> {
    if !(c1 > 0.0 && c2 > 0.0 && interface_fraction > 0.0 && interface_fraction < 1.0) {
        return Err(Error::invalid("capacities must be positive and the interface strictly inside"));
    }
    Ok((c2 * (1.0 - interface_fraction) / (c1 * interface_fraction)).sqrt())
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // Start from a few panels so oscillatory integrands are not sampled at
    // their zeros only.
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let (x0, x1) = (a + p as f64 * h, a + (p + 1) as f64 * h);
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            step(f, x0, x1, f0, fm, f1, h / 6.0 * (f0 + 4.0 * fm + f1), tol / panels as f64, 40)
        })
        .sum()
}

/// Truncated eigenfunction series for one two-layer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub beta: Vec<f64>,
    pub shapes: Vec<ModeShape>,
    pub coefficients: Vec<f64>,
    pub fourier: [f64; 2],
    pub fo_bar: f64,
    pub kappa: f64,
    pub weights: [f64; 2],
}

impl ModeSet {
    /// Eigenfunctions for the given Fourier numbers and interface ratio,
    /// weights `(1, w2)`, coefficients projected from the initial profiles.
    pub fn new(
        fourier: [f64; 2],
        kappa: f64,
        w2: f64,
        n_modes: usize,
        f1: impl Fn(f64) -> f64,
        f2: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(fourier[0] > 0.0 && fourier[1] > 0.0 && w2 > 0.0) {
            return Err(Error::invalid("Fourier numbers and weight must be positive"));
        }
        let fo_bar = (fourier[0] / fourier[1]).sqrt();
        let beta = transcendental_roots(fo_bar, kappa, n_modes)?;
        let shapes = mode_shapes(&beta, fo_bar, kappa)?;
        let mut set = ModeSet { beta, shapes, coefficients: vec![], fourier, fo_bar, kappa, weights: [1.0, w2] };
        let (g1, g2) = (f1(1.0), f2(0.0));
        if (g1 - g2).abs() > 1e-8 * (1.0 + g1.abs()) {
            log::warn!("initial profile is discontinuous at the interface; the series converges slowly");
        }
        set.coefficients = set.project(&f1, &f2);
        Ok(set)
    }

    /// Two-layer problem with zero Dirichlet data at both ends. The weight
    /// follows from `c_i d_i` being proportional to `k_i / (Fo_i d_i)`,
    /// hence `w2^2 = kappa Fo1 / Fo2`.
    pub fn for_problem(problem: &DimensionlessProblem, n_modes: usize) -> Result<Self> {
        problem.validate()?;
        if problem.n_layers() != 2 {
            return Err(Error::invalid("the series solution covers exactly two layers"));
        }
        for side in [&problem.left, &problem.right] {
            match side {
                SurfaceCondition::Dirichlet(g) if g.values.iter().all(|&v| v == 0.0) => {}
                _ => return Err(Error::invalid("the series solution needs zero temperature at both ends")),
            }
        }
        let fourier = [problem.fourier[0], problem.fourier[1]];
        let kappa = problem.kappa[0];
        let w2 = (kappa * fourier[0] / fourier[1]).sqrt();
        let init = problem.initial.clone();
        ModeSet::new(fourier, kappa, w2, n_modes, |x| init.eval(0, x), |x| init.eval(1, x))
    }

    pub fn n_modes(&self) -> usize {
        self.beta.len()
    }

    /// `phi_n` and its derivative on layer `layer`.
    pub fn shape(&self, n: usize, layer: usize, chi: f64) -> (f64, f64) {
        let m = &self.shapes[n];
        let (b, a, bb) = if layer == 0 {
            (self.beta[n], m.a1, m.b1)
        } else {
            (self.fo_bar * self.beta[n], m.a2, m.b2)
        };
        let (s, c) = (b * chi).sin_cos();
        (a * c + bb * s, b * (bb * c - a * s))
    }

    /// `sum_i w_i^2 int f phi_n phi_m`.
    pub fn weighted_inner(&self, f: impl Fn(usize, f64) -> f64, g: impl Fn(usize, f64) -> f64) -> f64 {
        (0..2).map(|i| self.weights[i].powi(2) * integrate(&|x| f(i, x) * g(i, x), 0.0, 1.0, 1e-12)).sum()
    }

    fn project(&self, f1: &impl Fn(f64) -> f64, f2: &impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n_modes())
            .map(|n| {
                let phi = |i: usize, x: f64| self.shape(n, i, x).0;
                let num = self.weighted_inner(|i, x| if i == 0 { f1(x) } else { f2(x) }, phi);
                let den = self.weighted_inner(phi, phi);
                num / den
            })
            .collect()
    }

    /// Re-projects a new initial condition on the same eigenfunctions.
    pub fn with_initial(mut self, f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64) -> Self {
        self.coefficients = self.project(&f1, &f2);
        self
    }

    /// `u` and `du/dchi` of layer `layer` at `(chi, tau)`.
    pub fn eval(&self, layer: usize, chi: f64, tau: f64) -> (f64, f64) {
        let mut u = 0.0;
        let mut d = 0.0;
        for n in 0..self.n_modes() {
            let decay = (-self.fourier[0] * self.beta[n].powi(2) * tau).exp();
            let (p, dp) = self.shape(n, layer, chi);
            u += self.coefficients[n] * p * decay;
            d += self.coefficients[n] * dp * decay;
        }
        (u, d)
    }

    /// Evaluates on each layer's grid at every time.
    pub fn field(&self, chi: &[Vec<f64>], times: &[f64]) -> Result<FieldSolution> {
        if chi.len() != 2 {
            return Err(Error::invalid("two chi grids required"));
        }
        if times.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::invalid("times must be non-negative"));
        }
        let start = Instant::now();
        let layers = chi
            .iter()
            .enumerate()
            .map(|(i, grid)| {
                let mut u = DMatrix::zeros(grid.len(), times.len());
                let mut d = DMatrix::zeros(grid.len(), times.len());
                for (k, &t) in times.iter().enumerate() {
                    for (j, &x) in grid.iter().enumerate() {
                        let (a, b) = self.eval(i, x, t);
                        u[(j, k)] = a;
                        d[(j, k)] = b;
                    }
                }
                LayerField { chi: grid.clone(), u, dudchi: d }
            })
            .collect();
        Ok(FieldSolution {
            model: ModelKind::Analytical,
            times: times.to_vec(),
            layers,
            dof: self.n_modes(),
            cpu_time: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // Case-2 materials with a one-hour time scale.
    const D: [f64; 2] = [0.18, 0.42];
    const K: [f64; 2] = [1.0, 0.5];
    const C: [f64; 2] = [1.3e6, 2.45e5];

    fn case2() -> ([f64; 2], f64) {
        let fo = [0, 1].map(|i| K[i] * 3600.0 / (C[i] * D[i] * D[i]));
        (fo, K[1] * D[0] / (K[0] * D[1]))
    }

    /// Roots from a plain sign scan: upward crossings are roots, downward
    /// crossings are poles.
    fn scan_roots(fo_bar: f64, kappa: f64, n: usize, step: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut x = step;
        let mut prev = residual(fo_bar, kappa, x);
        while out.len() < n {
            let y = x + step;
            let cur = residual(fo_bar, kappa, y);
            if prev < 0.0 && cur >= 0.0 {
                out.push(0.5 * (x + y));
            }
            prev = cur;
            x = y;
        }
        out
    }

    #[test]
    fn symmetric_layers_give_multiples_of_pi() {
        let r = transcendental_roots(1.0, 1.0, 10).unwrap();
        for (n, b) in r.iter().enumerate() {
            assert!((b - (n + 1) as f64 * PI).abs() < 1e-12, "{b}");
        }
    }

    #[test]
    fn case2_roots_match_sign_scan() {
        let (fo, kappa) = case2();
        let fb = (fo[0] / fo[1]).sqrt();
        let r = transcendental_roots(fb, kappa, 30).unwrap();
        let oracle = scan_roots(fb, kappa, 30, 1e-4);
        assert_eq!(r.len(), oracle.len());
        for (a, b) in r.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
            assert!(pole_free_residual(fb, kappa, *a).abs() <= 1e-12);
        }
        for w in r.windows(2) {
            assert!(w[1] - w[0] > 1e-9);
        }
    }

    #[test]
    fn mode_shapes_satisfy_the_conditions() {
        let (fo, kappa) = case2();
        let fb = (fo[0] / fo[1]).sqrt();
        let set = ModeSet::new(fo, kappa, 1.0, 12, |_| 0.0, |_| 0.0).unwrap();
        for n in 0..12 {
            let b = set.beta[n];
            let m = &set.shapes[n];
            let det = mode_matrix(b, fb, kappa).determinant();
            assert!(det.abs() <= 1e-10, "{det}");
            let v = nalgebra::Vector4::new(m.a1, m.b1, m.a2, m.b2);
            assert!((mode_matrix(b, fb, kappa) * v).amax() < 1e-9 * v.amax());
            // continuity, zero ends
            assert!((set.shape(n, 0, 1.0).0 - set.shape(n, 1, 0.0).0).abs() < 1e-12 * v.amax());
            assert!(set.shape(n, 0, 0.0).0.abs() < 1e-15);
            assert!(set.shape(n, 1, 1.0).0.abs() < 1e-9 * v.amax());
            // flux by central differences
            let h = 1e-6;
            let d1 = (set.shape(n, 0, 1.0).0 - set.shape(n, 0, 1.0 - h).0) / h;
            let d2 = (set.shape(n, 1, h).0 - set.shape(n, 1, 0.0).0) / h;
            assert!((d1 - kappa * d2).abs() < 1e-3 * (1.0 + d1.abs()) * b, "{d1} vs {}", kappa * d2);
        }
    }

    #[test]
    fn case2_tittle_weight() {
        let w = tittle_weight(1.3e6, 2.45e5, 0.3).unwrap();
        assert!((w - 0.66313).abs() < 1e-5, "{w}");
        // Same value from the dimensionless groups.
        let (fo, kappa) = case2();
        assert!(((kappa * fo[0] / fo[1]).sqrt() - w).abs() < 1e-12);
        assert!(tittle_weight(1.0, 1.0, 1.0).is_err());
    }

    fn case2_modes(n: usize) -> ModeSet {
        let (fo, kappa) = case2();
        let w2 = tittle_weight(C[0], C[1], 0.3).unwrap();
        ModeSet::new(fo, kappa, w2, n, |x| (PI * x / 2.0).sin(), |x| (PI * (1.0 - x) / 2.0).sin()).unwrap()
    }

    #[test]
    fn weighted_modes_are_orthogonal() {
        let m = case2_modes(10);
        let norms: Vec<f64> = (0..10)
            .map(|n| m.weighted_inner(|i, x| m.shape(n, i, x).0, |i, x| m.shape(n, i, x).0).sqrt())
            .collect();
        for a in 0..10 {
            for b in 0..10 {
                let g = m.weighted_inner(|i, x| m.shape(a, i, x).0, |i, x| m.shape(b, i, x).0) / (norms[a] * norms[b]);
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((g - target).abs() < 1e-8, "({a},{b}) {g}");
            }
        }
    }

    #[test]
    fn projecting_a_mode_recovers_it() {
        let m = case2_modes(8);
        let k = 3;
        let p = m.clone().with_initial(|x| m.shape(k, 0, x).0, |x| m.shape(k, 1, x).0);
        for n in 0..8 {
            let t = if n == k { 1.0 } else { 0.0 };
            assert!((p.coefficients[n] - t).abs() < 1e-8);
        }
    }

    #[test]
    fn truncation_error_decreases() {
        let f = |i: usize, x: f64| if i == 0 { (PI * x / 2.0).sin() } else { (PI * (1.0 - x) / 2.0).sin() };
        let err = |n: usize| {
            let m = case2_modes(n);
            (0..2)
                .flat_map(|i| (0..=50).map(move |j| (i, j as f64 / 50.0)))
                .map(|(i, x)| (m.eval(i, x, 0.0).0 - f(i, x)).abs())
                .fold(0.0, f64::max)
        };
        let (e5, e30) = (err(5), err(30));
        assert!(e30 < e5 && e30 < 1e-3, "{e5} {e30}");
    }

    #[test]
    fn series_satisfies_the_equation() {
        let m = case2_modes(30);
        let (h, dt) = (1e-3, 1e-4);
        for i in 0..2 {
            for &x in &[0.2, 0.5, 0.8] {
                for &t in &[0.5, 2.0] {
                    let ut = (m.eval(i, x, t + dt).0 - m.eval(i, x, t - dt).0) / (2.0 * dt);
                    let uxx = (m.eval(i, x + h, t).0 - 2.0 * m.eval(i, x, t).0 + m.eval(i, x - h, t).0) / (h * h);
                    assert!((ut - m.fourier[i] * uxx).abs() < 1e-6, "{}", ut - m.fourier[i] * uxx);
                }
            }
        }
        // Zero ends, interface continuity of value and flux.
        for &t in &[0.0, 0.3, 3.0] {
            assert!(m.eval(0, 0.0, t).0.abs() < 1e-10);
            assert!(m.eval(1, 1.0, t).0.abs() < 1e-10);
            assert!((m.eval(0, 1.0, t).0 - m.eval(1, 0.0, t).0).abs() < 1e-8);
            if t > 0.0 {
                assert!((m.eval(0, 1.0, t).1 - m.kappa * m.eval(1, 0.0, t).1).abs() < 1e-8);
            }
        }
        assert!(m.eval(0, 0.5, 500.0).0.abs() < 1e-10);
    }

    #[test]
    fn integrate_polynomials_and_sines() {
        assert!((integrate(&|x| x * x, 0.0, 1.0, 1e-12) - 1.0 / 3.0).abs() < 1e-13);
        assert!((integrate(&|x: f64| (20.0 * x).sin().powi(2), 0.0, PI, 1e-12) - PI / 2.0).abs() < 1e-10);
    }
}
