//! Physical outputs (flux, work rate, consumed work) and error measures.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::domain::DimensionlessProblem;
use crate::error::{Error, Result};
use crate::field::{fmt_g17, FieldSolution, LayerField};
use crate::series::trapezoid_weights;

/// Seconds in the 8760-hour year used for per-year figures.
pub const SECONDS_PER_YEAR: f64 = 8760.0 * 3600.0;

/// Heat flux `j = -k dT/dx` [W/m2] at physical position `x`, one value per
/// output time. Between nodes the derivative is interpolated linearly.
pub fn heat_flux(solution: &FieldSolution, problem: &DimensionlessProblem, x: f64) -> Result<Vec<f64>> {
    solution.validate()?;
    if solution.n_layers() != problem.n_layers() {
        return Err(Error::invalid("solution and problem disagree on the number of layers"));
    }
    let total: f64 = problem.thickness.iter().sum();
    if !(x >= 0.0 && x <= total * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("x = {x} lies outside the wall [0, {total}]")));
    }
    let mut start = 0.0;
    let mut layer = problem.n_layers() - 1;
    for (i, d) in problem.thickness.iter().enumerate() {
        if x <= start + d || i == problem.n_layers() - 1 {
            layer = i;
            break;
        }
        start += d;
    }
    let d = problem.thickness[layer];
    let chi = ((x - start) / d).clamp(0.0, 1.0);
    let scale = -problem.conductivity[layer] * problem.refs.delta() / d;
    let l = &solution.layers[layer];
    Ok((0..solution.n_times()).map(|k| scale * interp_column(l, &l.dudchi, chi, k)).collect())
}

fn interp_column(l: &LayerField, m: &DMatrix<f64>, chi: f64, k: usize) -> f64 {
    let n = l.chi.len();
    let j = l.chi.partition_point(|&c| c <= chi).clamp(1, n - 1);
    let (x0, x1) = (l.chi[j - 1], l.chi[j]);
    let t = if x1 > x0 { (chi - x0) / (x1 - x0) } else { 0.0 };
    m[(j - 1, k)] * (1.0 - t) + m[(j, k)] * t
}

/// `w = j_R (T_out / T_in - 1)`, temperatures in kelvin.
pub fn work_rate(j_inside: &[f64], t_out: &[f64], t_in: &[f64]) -> Result<Vec<f64>> {
    if j_inside.len() != t_out.len() || t_out.len() != t_in.len() {
        return Err(Error::invalid("flux and temperature series must have the same length"));
    }
    if t_out.iter().chain(t_in).any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("absolute temperatures must be positive"));
    }
    Ok(j_inside.iter().zip(t_out).zip(t_in).map(|((j, to), ti)| j * (to / ti - 1.0)).collect())
}

/// Trapezoid integral of `w` sampled every `dt` seconds [J/m2].
pub fn consumed_work(w: &[f64], dt: f64) -> f64 {
    if w.len() < 2 {
        return 0.0;
    }
    trapezoid_weights(w.len(), dt).iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Running trapezoid integral, starting at zero.
pub fn cumulative_work(w: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for (k, v) in w.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (w[k - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// Consumed work per 8760-hour year [J/m2/year].
pub fn per_year(work: f64, duration_s: f64) -> f64 {
    work * SECONDS_PER_YEAR / duration_s
}

/// Time series of the inside flux, work rate and cumulative consumed work.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkSeries {
    pub time_s: Vec<f64>,
    pub flux: Vec<f64>,
    pub rate: Vec<f64>,
    pub consumed: Vec<f64>,
}

impl WorkSeries {
    pub fn new(time_s: Vec<f64>, flux: Vec<f64>, t_out: &[f64], t_in: &[f64]) -> Result<Self> {
        if time_s.len() < 2 {
            return Err(Error::invalid("work series needs at least two samples"));
        }
        let dt = time_s[1] - time_s[0];
        let rate = work_rate(&flux, t_out, t_in)?;
        let consumed = cumulative_work(&rate, dt);
        Ok(Self { time_s, flux, rate, consumed })
    }

    pub fn total(&self) -> f64 {
        self.consumed.last().copied().unwrap_or(0.0)
    }

    pub fn per_year(&self) -> f64 {
        per_year(self.total(), self.time_s.last().unwrap() - self.time_s[0])
    }
}

/// Which part of a field an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U,
    Dudchi,
}

impl Component {
    fn of<'a>(&self, l: &'a LayerField) -> &'a DMatrix<f64> {
        match self {
            Component::U => &l.u,
            Component::Dudchi => &l.dudchi,
        }
    }
}

/// `eps2(tau)`: root of the trapezoid integral of the squared difference
/// over every layer's unit interval, averaged over layers.
pub fn error_l2(y: &FieldSolution, reference: &FieldSolution, c: Component) -> Result<Vec<f64>> {
    if y.n_layers() == 0 || y.n_times() == 0 {
        return Err(Error::invalid("empty field"));
    }
    if y.n_layers() != reference.n_layers() || y.n_times() != reference.n_times() {
        return Err(Error::invalid("fields live on different grids"));
    }
    let mut acc = vec![0.0; y.n_times()];
    for (a, b) in y.layers.iter().zip(&reference.layers) {
        if a.chi.len() != b.chi.len() {
            return Err(Error::invalid("fields live on different space grids"));
        }
        let w = trapezoid_weights(a.chi.len(), 1.0 / (a.chi.len() - 1) as f64);
        let (ma, mb) = (c.of(a), c.of(b));
        for (k, s) in acc.iter_mut().enumerate() {
            *s += (0..a.chi.len()).map(|j| w[j] * (ma[(j, k)] - mb[(j, k)]).powi(2)).sum::<f64>();
        }
    }
    let nl = y.n_layers() as f64;
    Ok(acc.into_iter().map(|s| (s / nl).sqrt()).collect())
}

/// `eps_inf`: largest `eps2` over time.
pub fn error_inf(y: &FieldSolution, reference: &FieldSolution, c: Component) -> Result<f64> {
    Ok(error_l2(y, reference, c)?.into_iter().fold(0.0, f64::max))
}

/// `eps_param`: largest `eps_inf` over a parameter set.
pub fn error_param(per_point: &[f64]) -> Result<f64> {
    if per_point.is_empty() {
        return Err(Error::invalid("no parameter points"));
    }
    Ok(per_point.iter().copied().fold(0.0, f64::max))
}

/// Cubic Lagrange interpolation through the four nodes around `x`.
fn cubic_at(grid: &[f64], values: impl Fn(usize) -> f64, x: f64) -> f64 {
    let n = grid.len();
    if n < 4 {
        let j = grid.partition_point(|&c| c <= x).clamp(1, n - 1);
        let t = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
        return values(j - 1) * (1.0 - t) + values(j) * t;
    }
    let j = grid.partition_point(|&c| c <= x).clamp(2, n - 2) - 2;
    let mut s = 0.0;
    for a in j..j + 4 {
        let mut l = 1.0;
        for b in j..j + 4 {
            if a != b {
                l *= (x - grid[b]) / (grid[a] - grid[b]);
            }
        }
        s += l * values(a);
    }
    s
}

/// Reference field brought onto other grids: cubic in space, linear in time.
pub fn resample(reference: &FieldSolution, chi: &[Vec<f64>], times: &[f64]) -> Result<FieldSolution> {
    if chi.len() != reference.n_layers() {
        return Err(Error::invalid("one chi grid per layer required"));
    }
    let rt = &reference.times;
    let time_at = |t: f64| -> (usize, f64) {
        if rt.len() == 1 {
            return (0, 0.0);
        }
        let k = rt.partition_point(|&s| s <= t).clamp(1, rt.len() - 1);
        let w = ((t - rt[k - 1]) / (rt[k] - rt[k - 1])).clamp(0.0, 1.0);
        (k - 1, w)
    };
    let layers = reference
        .layers
        .iter()
        .zip(chi)
        .map(|(l, grid)| {
            let pick = |m: &DMatrix<f64>| {
                DMatrix::from_fn(grid.len(), times.len(), |j, k| {
                    let (k0, w) = time_at(times[k]);
                    let k1 = (k0 + 1).min(rt.len() - 1);
                    let at = |kk: usize| cubic_at(&l.chi, |a| m[(a, kk)], grid[j]);
                    at(k0) * (1.0 - w) + if w > 0.0 { at(k1) * w } else { 0.0 }
                })
            };
            LayerField { chi: grid.clone(), u: pick(&l.u), dudchi: pick(&l.dudchi) }
        })
        .collect();
    Ok(FieldSolution { times: times.to_vec(), layers, ..reference.clone() })
}

pub fn dof_com(n_chi: usize, n_tau: usize) -> usize {
    n_chi * n_tau
}

pub fn dof_podt(n_modes: usize, n_tau: usize) -> usize {
    n_modes * n_tau
}

pub fn dof_podx(n_chi: usize, n_modes: usize) -> usize {
    n_chi * n_modes
}

/// Mean wall-clock seconds over `repeats` runs after one excluded warm-up.
pub fn cpu_time<T>(repeats: usize, mut run: impl FnMut() -> T) -> f64 {
    std::hint::black_box(run());
    let repeats = repeats.max(1);
    let start = Instant::now();
    for _ in 0..repeats {
        std::hint::black_box(run());
    }
    start.elapsed().as_secs_f64() / repeats as f64
}

/// Default repeat count of [`cpu_time`].
pub const CPU_REPEATS: usize = 20;

/// Writes `metric,value,config_id` rows.
pub fn write_metric_csv(path: impl AsRef<Path>, rows: &[(String, f64)], config_id: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value", "config_id"])?;
    for (name, v) in rows {
        w.write_record([name.as_str(), &fmt_g17(*v), config_id])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a metric CSV as `(metric, value, config_id)`.
pub fn read_metric_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64, String)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{InitialProfile, References, RobinData, SurfaceCondition};
    use crate::field::ModelKind;
    use proptest::prelude::*;

    fn field(u: impl Fn(usize, f64, f64) -> f64, d: impl Fn(usize, f64, f64) -> f64, nl: usize) -> FieldSolution {
        let times = vec![0.0, 0.5, 1.0];
        let chi: Vec<f64> = (0..=10).map(|j| j as f64 / 10.0).collect();
        FieldSolution {
            model: ModelKind::Com,
            layers: (0..nl)
                .map(|i| LayerField {
                    chi: chi.clone(),
                    u: DMatrix::from_fn(11, 3, |j, k| u(i, chi[j], times[k])),
                    dudchi: DMatrix::from_fn(11, 3, |j, k| d(i, chi[j], times[k])),
                })
                .collect(),
            times,
            dof: 0,
            cpu_time: 0.0,
        }
    }

    fn problem(k: f64, d: f64, t_min: f64, t_max: f64) -> DimensionlessProblem {
        DimensionlessProblem {
            fourier: vec![1.0],
            kappa: vec![],
            thickness: vec![d],
            conductivity: vec![k],
            left: SurfaceCondition::Robin(RobinData::constant(1.0, 0.0, 0.0, 1.0, 2)),
            right: SurfaceCondition::Robin(RobinData::constant(1.0, 0.0, 0.0, 1.0, 2)),
            tau_final: 1.0,
            refs: References::new(t_min, t_max, 3600.0).unwrap(),
            initial: InitialProfile::constant(1, 0.0),
        }
    }

    #[test]
    fn flux_of_linear_profile() {
        // T falls 10 K/m across 0.2 m; the scale is 20 K, so du/dchi = -0.1.
        let f = field(|_, x, _| 0.5 - 0.1 * x, |_, _, _| -0.1, 1);
        let p = problem(0.5, 0.2, 280.0, 300.0);
        for x in [0.0, 0.07, 0.2] {
            for j in heat_flux(&f, &p, x).unwrap() {
                assert!((j - 5.0).abs() < 1e-12);
            }
        }
        let flat = field(|_, _, _| 0.3, |_, _, _| 0.0, 1);
        assert!(heat_flux(&flat, &p, 0.1).unwrap().iter().all(|&j| j == 0.0));
        assert!(heat_flux(&f, &p, 0.3).is_err());
    }

    #[test]
    fn work_rate_examples() {
        let w = work_rate(&[10.0], &[303.15], &[297.15]).unwrap()[0];
        assert!((w - 10.0 * (303.15 / 297.15 - 1.0)).abs() < 1e-15);
        assert!((w - 0.20192).abs() < 1e-5);
        assert_eq!(work_rate(&[7.0], &[290.0], &[290.0]).unwrap()[0], 0.0);
        assert!(work_rate(&[1.0], &[0.0], &[290.0]).is_err());
    }

    #[test]
    fn work_rate_sign_table() {
        // sign(w) = sign(j) * sign(T_out - T_in)
        for (j, to, expect) in [(10.0, 300.0, 1.0), (10.0, 280.0, -1.0), (-10.0, 300.0, -1.0), (-10.0, 280.0, 1.0)] {
            let w = work_rate(&[j], &[to], &[290.0]).unwrap()[0];
            assert_eq!(w.signum(), expect);
        }
    }

    #[test]
    fn consumed_work_examples() {
        assert_eq!(consumed_work(&[0.0; 10], 3600.0), 0.0);
        assert!((consumed_work(&[1.0, 1.0], 3600.0) - 3600.0).abs() < 1e-12);
        assert_eq!(per_year(1.0, SECONDS_PER_YEAR * 2.0), 0.5);
        let c = cumulative_work(&[1.0, 3.0, 5.0], 2.0);
        assert_eq!(c, vec![0.0, 4.0, 12.0]);
    }

    proptest! {
        #[test]
        fn consumed_work_is_additive(w in proptest::collection::vec(-50.0f64..50.0, 3..60), cut in 1usize..59) {
            let cut = cut.min(w.len() - 2);
            let whole = consumed_work(&w, 3600.0);
            let parts = consumed_work(&w[..=cut], 3600.0) + consumed_work(&w[cut..], 3600.0);
            prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()) * w.len() as f64);
        }

        #[test]
        fn l2_error_triangle_inequality(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, s in 0.5f64..5.0) {
            let f = |amp: f64| field(move |i, x, t| amp * (s * x + t + i as f64).sin(), |_, _, _| 0.0, 2);
            let (fa, fb, fc) = (f(a), f(b), f(c));
            let ab = error_l2(&fa, &fb, Component::U).unwrap();
            let bc = error_l2(&fb, &fc, Component::U).unwrap();
            let ac = error_l2(&fa, &fc, Component::U).unwrap();
            for k in 0..ab.len() {
                prop_assert!(ac[k] <= ab[k] + bc[k] + 1e-12);
            }
        }
    }

    #[test]
    fn error_examples() {
        let a = field(|i, x, t| x * t + i as f64, |_, x, _| x, 2);
        assert!(error_l2(&a, &a, Component::U).unwrap().iter().all(|&e| e == 0.0));
        let b = field(|i, x, t| x * t + i as f64 + 0.25, |_, x, _| x, 2);
        for e in error_l2(&b, &a, Component::U).unwrap() {
            assert!((e - 0.25).abs() < 1e-14);
        }
        assert!((error_inf(&b, &a, Component::U).unwrap() - 0.25).abs() < 1e-14);
        assert_eq!(error_inf(&b, &a, Component::Dudchi).unwrap(), 0.0);
        assert_eq!(error_param(&[0.1, 0.3, 0.2]).unwrap(), 0.3);
        assert!(error_param(&[]).is_err());
    }

    #[test]
    fn resampling_is_exact_for_cubics_in_space_and_lines_in_time() {
        let f = |_: usize, x: f64, t: f64| x.powi(3) - 2.0 * x + 1.0 + 3.0 * t;
        let r = field(f, |_, x, _| 3.0 * x * x - 2.0, 1);
        let chi = vec![vec![0.0, 0.13, 0.5, 0.77, 1.0]];
        let s = resample(&r, &chi, &[0.25, 0.9]).unwrap();
        for (j, &x) in chi[0].iter().enumerate() {
            for (k, &t) in [0.25, 0.9].iter().enumerate() {
                assert!((s.layers[0].u[(j, k)] - f(0, x, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dof_counts() {
        assert_eq!(dof_com(101, 721), 72821);
        assert_eq!(dof_podt(6, 721), 4326);
        assert_eq!(dof_podx(101, 6), 606);
    }

    #[test]
    fn cpu_time_of_noop_is_tiny() {
        assert!(cpu_time(CPU_REPEATS, || ()) < 1e-3);
    }

    #[test]
    fn metric_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![("eps".to_string(), 1.25e-4), ("dof".to_string(), 606.0), ("bad".to_string(), f64::INFINITY)];
        write_metric_csv(&path, &rows, "mono").unwrap();
        let back = read_metric_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        for ((n, v), (m, w, id)) in rows.iter().zip(&back) {
            assert_eq!((n, v, id.as_str()), (m, w, "mono"));
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("metric,value,config_id\n"));
    }
}
