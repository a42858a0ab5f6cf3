//! Preset configurations and the workflows built on them: verification of
//! the mono-layer, two-layer and parametric cases, offline archive building
//! and the design sweep.
//!
//! Every config deserializes with defaults filled from the preset, so a JSON
//! document only needs the fields it overrides.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytical::ModeSet;
use crate::climate::{
    load_weather, sample_halton, sample_halton_from, steady_state_profile, synthetic_weather, ParameterBox,
    Setpoint, Weather, KELVIN,
};
use crate::domain::{
    to_dimensionless, BoundarySeries, ConvectiveModel, DimensionlessProblem, InitialProfile, Layer, References,
    SurfaceCondition, WallSpec,
};
use crate::error::{Error, Result};
use crate::field::FieldSolution;
use crate::lom::{output_grid, solve_com, solve_exact_in_time, Mesh};
use crate::manifold::{interpolate_naive, max_principal_angle, BasisArchive, Interpolator};
use crate::metrics::{self, Component};
use crate::pod::{
    assemble_podx, assemble_podx_weak_initial, extract_space_basis, extract_time_basis, podx_right_surface, snapshot_ranks,
    solve_podt, solve_podx, SnapshotSet, TimeBasis,
};
use crate::series::Series;

/// Metric rows `(name, value)` as written to the metric CSV.
pub type Metrics = Vec<(String, f64)>;

fn axis_box(axes: &[(&str, f64, f64)]) -> ParameterBox {
    ParameterBox::new(axes.to_vec()).expect("preset box is valid")
}

/// Row of an error/cost table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub model: String,
    pub modes: usize,
    pub eps_inf_u: f64,
    pub eps_inf_du: f64,
    pub dof: usize,
    pub cpu_s: f64,
}

impl ModelRow {
    fn push_metrics(&self, out: &mut Metrics) {
        let tag = if self.modes == 0 { self.model.clone() } else { format!("{}_n{}", self.model, self.modes) };
        out.push((format!("{tag}_eps_inf_u"), self.eps_inf_u));
        out.push((format!("{tag}_eps_inf_dudchi"), self.eps_inf_du));
        out.push((format!("{tag}_dof"), self.dof as f64));
        out.push((format!("{tag}_cpu_s"), self.cpu_s));
    }
}

fn compare(model: &str, modes: usize, y: &FieldSolution, reference: &FieldSolution, cpu_s: f64) -> Result<ModelRow> {
    Ok(ModelRow {
        model: model.into(),
        modes,
        eps_inf_u: metrics::error_inf(y, reference, Component::U)?,
        eps_inf_du: metrics::error_inf(y, reference, Component::Dudchi)?,
        dof: y.dof,
        cpu_s,
    })
}

/// PODx run on an existing snapshot field: basis of `modes` per layer,
/// solved back on the snapshot grids. `weak_initial` selects the assembly
/// that carries the initial state as a source, needed when the boundaries
/// do not drive the wall.
pub fn podx_from_snapshots(
    problem: &DimensionlessProblem,
    snapshots: &FieldSolution,
    modes: usize,
    tol: f64,
    weak_initial: bool,
) -> Result<(TimeBasis, FieldSolution)> {
    let set = SnapshotSet::from_field(snapshots)?;
    let basis = extract_time_basis(&set, &vec![modes; problem.n_layers()])?;
    let sys = if weak_initial { assemble_podx_weak_initial(problem, &basis)? } else { assemble_podx(problem, &basis)? };
    let chi: Vec<Vec<f64>> = snapshots.layers.iter().map(|l| l.chi.clone()).collect();
    let f = solve_podx(&sys, &basis, &chi, tol)?;
    Ok((basis, f))
}

// ---------------------------------------------------------------- mono

/// Single layer under synthetic outdoor/indoor forcing over thirty days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonoConfig {
    pub layer: Layer,
    pub h_left: f64,
    pub h_right: f64,
    pub t_initial_c: f64,
    pub days: f64,
    /// Seconds per unit of dimensionless time.
    pub t0: f64,
    /// Sampling step of the synthetic boundary data [s].
    pub bc_step_s: f64,
    pub dchi: f64,
    pub dtau: f64,
    pub tol: f64,
    pub modes: usize,
    pub sweep: Vec<usize>,
    /// Space refinement of the reference relative to the COM mesh.
    pub reference_refinement: usize,
    pub cpu_repeats: usize,
}

impl Default for MonoConfig {
    fn default() -> Self {
        Self {
            layer: Layer { thickness: 0.1, conductivity: 0.5, heat_capacity: 1.5e5 },
            h_left: 6.0,
            h_right: 7.5,
            t_initial_c: -5.0,
            days: 30.0,
            t0: 3600.0,
            bc_step_s: 60.0,
            dchi: 0.01,
            dtau: 1.0,
            tol: 1e-8,
            modes: 6,
            sweep: (1..=15).collect(),
            reference_refinement: 4,
            cpu_repeats: metrics::CPU_REPEATS,
        }
    }
}

impl MonoConfig {
    /// Outdoor air warming from the initial temperature with a daily swing,
    /// solar flux peaking at noon, indoor air relaxing from the initial
    /// temperature to 20 C over half a day. Every series is smooth and sampled
    /// finely: the kinks of coarse linear data leave `sqrt(t)` transients at
    /// the surface that an hourly time basis cannot follow.
    pub fn boundary(&self) -> Result<BoundarySeries> {
        let t_end = self.days * 86400.0;
        let n = (t_end / self.bc_step_s).round() as usize + 1;
        let t_init = self.t_initial_c;
        let day = 86400.0;
        // Daily cycles modulated over a few days plus a slow monthly bump.
        let out = move |t: f64| {
            let daily = 8.0 * (1.0 - (2.0 * PI * t / day).cos()) * (1.0 + 0.3 * (2.0 * PI * t / (6.1 * day)).sin());
            t_init + daily + 6.0 * (PI * t / t_end).sin().powi(2) + 3.0 * (2.0 * PI * t / (3.7 * day)).sin().powi(2) + KELVIN
        };
        let inside = move |t: f64| 20.0 + (t_init - 20.0) * (-t / (0.5 * day)).exp() + KELVIN;
        let sun = move |t: f64| 200.0 * (1.0 - (2.0 * PI * t / day).cos()) * (0.7 + 0.3 * (2.0 * PI * t / (4.3 * day)).cos());
        let mk = |f: &dyn Fn(f64) -> f64| Series::from_fn(0.0, self.bc_step_s, n, f);
        let bc = BoundarySeries {
            t_out: mk(&out),
            t_in: mk(&inside),
            v_wind: mk(&|_| 0.0),
            q_sw: mk(&sun),
            t_sky: mk(&out),
        };
        bc.validate()?;
        Ok(bc)
    }

    pub fn problem(&self) -> Result<DimensionlessProblem> {
        let wall = WallSpec {
            layers: vec![self.layer],
            emissivity: 0.0,
            h_inside: self.h_right,
            convective: ConvectiveModel::constant(self.h_left),
        };
        let bc = self.boundary()?;
        let t_init = self.t_initial_c + KELVIN;
        let refs = References::from_boundary(&bc, &[t_init], self.t0)?;
        let p = to_dimensionless(&wall, &bc, &refs)?;
        let u0 = refs.scale(t_init);
        Ok(p.with_initial(InitialProfile::constant(1, u0)))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::uniform(self.dchi, 1)
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        output_grid(self.days * 86400.0 / self.t0, self.dtau)
    }
}

/// Complete model and its time-exact refined reference for the mono case.
#[derive(Debug, Clone)]
pub struct MonoRun {
    pub problem: DimensionlessProblem,
    pub mesh: Mesh,
    pub reference: FieldSolution,
    pub com: FieldSolution,
}

impl MonoRun {
    pub fn new(cfg: &MonoConfig) -> Result<Self> {
        let problem = cfg.problem()?;
        let mesh = cfg.mesh()?;
        let times = cfg.times()?;
        let r = cfg.reference_refinement.max(1);
        let fine = solve_exact_in_time(&problem, &mesh.refined(r), &times)?;
        let reference = fine.coarsen(&[r])?;
        let com = solve_com(&problem, &mesh, cfg.tol, &times)?;
        Ok(Self { problem, mesh, reference, com })
    }

    pub fn podt(&self, modes: usize, tol: f64) -> Result<(FieldSolution, f64)> {
        let basis = extract_space_basis(&self.com, &self.mesh, modes)?;
        let start = Instant::now();
        let f = solve_podt(&self.problem, &basis, tol, &self.com.times)?;
        Ok((f, start.elapsed().as_secs_f64()))
    }

    pub fn podx(&self, modes: usize, tol: f64) -> Result<(FieldSolution, TimeBasis)> {
        let (basis, f) = podx_from_snapshots(&self.problem, &self.com, modes, tol, false)?;
        Ok((f, basis))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonoReport {
    pub times: Vec<f64>,
    /// COM, PODt and PODx at the configured order, all against the reference.
    pub rows: Vec<ModelRow>,
    /// PODt and PODx over the order sweep.
    pub sweep: Vec<ModelRow>,
    pub eps2_u: Vec<(String, Vec<f64>)>,
    pub eps2_du: Vec<(String, Vec<f64>)>,
}

impl MonoReport {
    pub fn metrics(&self) -> Metrics {
        let mut out = Vec::new();
        for r in self.rows.iter().chain(&self.sweep) {
            r.push_metrics(&mut out);
        }
        out
    }
}

pub fn verify_mono(cfg: &MonoConfig) -> Result<MonoReport> {
    let run = MonoRun::new(cfg)?;
    verify_mono_with(cfg, &run)
}

/// Same as [`verify_mono`] on a precomputed run.
pub fn verify_mono_with(cfg: &MonoConfig, run: &MonoRun) -> Result<MonoReport> {
    let reps = cfg.cpu_repeats;
    let rom = |n: usize| -> Result<[(ModelRow, FieldSolution); 2]> {
        let basis = extract_space_basis(&run.com, &run.mesh, n)?;
        let podt = solve_podt(&run.problem, &basis, cfg.tol, &run.com.times)?;
        let t_podt = metrics::cpu_time(reps, || solve_podt(&run.problem, &basis, cfg.tol, &run.com.times));
        let (podx, tb) = run.podx(n, cfg.tol)?;
        let sys = assemble_podx(&run.problem, &tb)?;
        let chi = [run.mesh.chi(0)];
        let t_podx = metrics::cpu_time(reps, || solve_podx(&sys, &tb, &chi, cfg.tol));
        Ok([
            (compare("podt", n, &podt, &run.reference, t_podt)?, podt),
            (compare("podx", n, &podx, &run.reference, t_podx)?, podx),
        ])
    };

    let com_row = compare("com", 0, &run.com, &run.reference, run.com.cpu_time)?;
    let [(podt_row, podt), (podx_row, podx)] = rom(cfg.modes)?;
    let mut eps2_u = Vec::new();
    let mut eps2_du = Vec::new();
    for (name, f) in [("com", &run.com), ("podt", &podt), ("podx", &podx)] {
        eps2_u.push((name.to_string(), metrics::error_l2(f, &run.reference, Component::U)?));
        eps2_du.push((name.to_string(), metrics::error_l2(f, &run.reference, Component::Dudchi)?));
    }

    let mut sweep = Vec::new();
    for &n in &cfg.sweep {
        match rom(n) {
            Ok([(a, _), (b, _)]) => {
                sweep.push(a);
                sweep.push(b);
            }
            Err(e @ Error::RankDeficient { .. }) => {
                log::warn!("sweep stops at N = {n}: {e}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(MonoReport { times: run.com.times.clone(), rows: vec![com_row, podt_row, podx_row], sweep, eps2_u, eps2_du })
}

// ---------------------------------------------------------- multilayer

/// Two layers held at zero at both ends, relaxing from a sine profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultilayerConfig {
    pub layers: [Layer; 2],
    pub t_min_c: f64,
    pub t_max_c: f64,
    pub hours: f64,
    pub t0: f64,
    pub dchi: f64,
    pub dtau: f64,
    pub tol: f64,
    pub modes: usize,
    pub series_modes: usize,
    /// Larger truncation used for the self-consistency check of the series.
    pub check_modes: usize,
}

impl Default for MultilayerConfig {
    fn default() -> Self {
        Self {
            layers: [
                Layer { thickness: 0.18, conductivity: 1.0, heat_capacity: 1.3e6 },
                Layer { thickness: 0.42, conductivity: 0.5, heat_capacity: 2.45e5 },
            ],
            t_min_c: -5.0,
            t_max_c: 30.0,
            hours: 6.0,
            t0: 3600.0,
            dchi: 0.01,
            dtau: 1e-3,
            tol: 1e-9,
            modes: 5,
            series_modes: 30,
            check_modes: 60,
        }
    }
}

fn sine_initial(layer: usize, chi: f64) -> f64 {
    if layer == 0 {
        (0.5 * PI * chi).sin()
    } else {
        (0.5 * PI * (1.0 - chi)).sin()
    }
}

impl MultilayerConfig {
    pub fn problem(&self) -> Result<DimensionlessProblem> {
        for l in &self.layers {
            l.validate()?;
        }
        let refs = References::new(self.t_min_c + KELVIN, self.t_max_c + KELVIN, self.t0)?;
        let tau_f = self.hours * 3600.0 / self.t0;
        let zero = Series::constant(0.0, 0.0, tau_f, 2);
        let fourier =
            self.layers.iter().map(|l| crate::domain::fourier_number(l, self.t0)).collect::<Result<Vec<_>>>()?;
        // 1000 samples per layer hold every node of any mesh with dchi a multiple of 1e-3.
        let initial = InitialProfile::from_fn(2, 1001, sine_initial);
        let p = DimensionlessProblem {
            fourier,
            kappa: crate::domain::interface_ratios(&self.layers),
            thickness: self.layers.iter().map(|l| l.thickness).collect(),
            conductivity: self.layers.iter().map(|l| l.conductivity).collect(),
            left: SurfaceCondition::Dirichlet(zero.clone()),
            right: SurfaceCondition::Dirichlet(zero),
            tau_final: tau_f,
            refs,
            initial,
        };
        p.validate()?;
        Ok(p)
    }

    /// Series solution with the exact sine initial data.
    pub fn series(&self, problem: &DimensionlessProblem, n_modes: usize) -> Result<ModeSet> {
        let fourier = [problem.fourier[0], problem.fourier[1]];
        let kappa = problem.kappa[0];
        let w2 = (kappa * fourier[0] / fourier[1]).sqrt();
        ModeSet::new(fourier, kappa, w2, n_modes, |x| sine_initial(0, x), |x| sine_initial(1, x))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MultilayerReport {
    pub times: Vec<f64>,
    pub eps2_u: Vec<f64>,
    pub eps2_du: Vec<f64>,
    pub max_eps2_u: f64,
    pub max_eps2_du: f64,
    /// Largest deviation of the interface temperature and of the interface
    /// flux `du/dchi` (left side) from the series.
    pub interface_u: f64,
    pub interface_du: f64,
    /// Largest `eps2` between the truncated and the longer series.
    pub series_truncation: f64,
    pub com_eps_inf_u: f64,
    pub podx_dof: usize,
}

impl MultilayerReport {
    pub fn metrics(&self) -> Metrics {
        vec![
            ("podx_max_eps2_u".into(), self.max_eps2_u),
            ("podx_max_eps2_dudchi".into(), self.max_eps2_du),
            ("podx_interface_u".into(), self.interface_u),
            ("podx_interface_dudchi".into(), self.interface_du),
            ("series_truncation_eps2".into(), self.series_truncation),
            ("com_eps_inf_u".into(), self.com_eps_inf_u),
            ("podx_dof".into(), self.podx_dof as f64),
        ]
    }
}

pub fn verify_multilayer(cfg: &MultilayerConfig) -> Result<MultilayerReport> {
    let problem = cfg.problem()?;
    let mesh = Mesh::uniform(cfg.dchi, 2)?;
    let times = output_grid(problem.tau_final, cfg.dtau)?;
    let chi = vec![mesh.chi(0), mesh.chi(1)];

    let com = solve_com(&problem, &mesh, cfg.tol, &times)?;
    let (_, podx) = podx_from_snapshots(&problem, &com, cfg.modes, cfg.tol, true)?;
    let series = cfg.series(&problem, cfg.series_modes)?.field(&chi, &times)?;
    let check = cfg.series(&problem, cfg.check_modes)?.field(&chi, &times)?;

    let eps2_u = metrics::error_l2(&podx, &series, Component::U)?;
    let eps2_du = metrics::error_l2(&podx, &series, Component::Dudchi)?;
    let last = chi[0].len() - 1;
    let mut interface_u = 0.0f64;
    let mut interface_du = 0.0f64;
    for k in 0..times.len() {
        interface_u = interface_u.max((podx.layers[0].u[(last, k)] - series.layers[0].u[(last, k)]).abs());
        interface_du = interface_du.max((podx.layers[0].dudchi[(last, k)] - series.layers[0].dudchi[(last, k)]).abs());
    }
    let trunc_u = metrics::error_inf(&series, &check, Component::U)?;
    let trunc_du = metrics::error_inf(&series, &check, Component::Dudchi)?;
    Ok(MultilayerReport {
        max_eps2_u: eps2_u.iter().copied().fold(0.0, f64::max),
        max_eps2_du: eps2_du.iter().copied().fold(0.0, f64::max),
        times,
        eps2_u,
        eps2_du,
        interface_u,
        interface_du,
        series_truncation: trunc_u.max(trunc_du),
        com_eps_inf_u: metrics::error_inf(&com, &series, Component::U)?,
        podx_dof: podx.dof,
    })
}

// ---------------------------------------------------------------- param

/// Brick plus a second layer whose conductivity and thickness vary together
/// with the outside convection coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamConfig {
    pub brick: Layer,
    pub heat_capacity_2: f64,
    pub h_right: f64,
    /// Axes `(k2, d2, h_left)`.
    pub domain: ParameterBox,
    pub t_initial_c: f64,
    pub t0: f64,
    pub tau_final: f64,
    pub dtau: f64,
    pub dchi: f64,
    pub tol: f64,
    /// Collocation residual tolerance of the online PODx solves.
    pub bvp_tol: f64,
    pub modes: usize,
    pub n_basis: usize,
    pub n_queries: usize,
    /// Explicit archive points; Halton points of the box when absent.
    pub basis_points: Option<Vec<Vec<f64>>>,
    /// Stored archive directory used instead of building one.
    pub archive: Option<PathBuf>,
}

impl Default for ParamConfig {
    fn default() -> Self {
        Self {
            brick: Layer { thickness: 0.12, conductivity: 1.0, heat_capacity: 1.85e6 },
            heat_capacity_2: 1.0e6,
            h_right: 7.0,
            domain: axis_box(&[("k2", 0.1, 2.0), ("d2", 0.1, 0.3), ("h_left", 10.0, 30.0)]),
            t_initial_c: 20.0,
            t0: 86400.0,
            tau_final: 0.5,
            dtau: 1e-3,
            dchi: 0.01,
            tol: 1e-8,
            bvp_tol: 1e-4,
            modes: 5,
            n_basis: 5,
            n_queries: 100,
            basis_points: None,
            archive: None,
        }
    }
}

impl ParamConfig {
    /// Outdoor air with a slow swing, a sharp solar peak, indoor air drifting
    /// up by a few kelvin. Identical for every parameter point.
    pub fn boundary(&self) -> Result<BoundarySeries> {
        let step = self.dtau * self.t0;
        let n = (self.tau_final / self.dtau).round() as usize + 1;
        let t_init = self.t_initial_c;
        let mk = |f: &dyn Fn(f64) -> f64| Series::from_fn(0.0, step, n, f);
        let bc = BoundarySeries {
            t_out: mk(&|t| t_init + 5.0 * (t / 86400.0).sin() + KELVIN),
            t_in: mk(&|t| t_init + 2.5 * (1.0 - (t / 86400.0).cos()) + KELVIN),
            v_wind: mk(&|_| 0.0),
            q_sw: mk(&|t| 150.0 * (t / 21600.0).sin().powi(6)),
            t_sky: mk(&|t| t_init + 5.0 * (t / 86400.0).sin() + KELVIN),
        };
        bc.validate()?;
        Ok(bc)
    }

    pub fn problem(&self, p: &[f64]) -> Result<DimensionlessProblem> {
        if p.len() != 3 {
            return Err(Error::invalid("parameter points have three coordinates (k2, d2, h_left)"));
        }
        let wall = WallSpec {
            layers: vec![self.brick, Layer::new(p[1], p[0], self.heat_capacity_2)?],
            emissivity: 0.0,
            h_inside: self.h_right,
            convective: ConvectiveModel::constant(p[2]),
        };
        let bc = self.boundary()?;
        let t_init = self.t_initial_c + KELVIN;
        let refs = References::from_boundary(&bc, &[t_init], self.t0)?;
        let prob = to_dimensionless(&wall, &bc, &refs)?;
        let u0 = refs.scale(t_init);
        Ok(prob.with_initial(InitialProfile::constant(2, u0)))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::uniform(self.dchi, 2)
    }

    pub fn archive_points(&self) -> Result<Vec<Vec<f64>>> {
        match &self.basis_points {
            Some(p) => Ok(p.clone()),
            None => sample_halton(&self.domain, self.n_basis),
        }
    }

    /// Query points continue the Halton sequence past the archive.
    pub fn query_points(&self) -> Result<Vec<Vec<f64>>> {
        sample_halton_from(&self.domain, self.n_queries, self.n_basis as u64)
    }

    /// Complete model at `p`, sampled on the snapshot grid.
    pub fn com(&self, p: &[f64]) -> Result<FieldSolution> {
        let problem = self.problem(p)?;
        let times = output_grid(self.tau_final, self.dtau)?;
        solve_com(&problem, &self.mesh()?, self.tol, &times)
    }
}

/// Offline phase: one complete run per point, `modes` per layer.
pub fn build_archive(
    domain: &ParameterBox,
    points: &[Vec<f64>],
    modes: usize,
    run: impl Fn(&[f64]) -> Result<FieldSolution> + Sync,
) -> Result<(BasisArchive, Vec<f64>)> {
    let runs: Vec<(SnapshotSet, Vec<usize>, f64)> = points
        .par_iter()
        .map(|p| {
            let f = run(p)?;
            let set = SnapshotSet::from_field(&f)?;
            let ranks = snapshot_ranks(&set)?;
            Ok((set, ranks, f.cpu_time))
        })
        .collect::<Result<_>>()?;
    // Entries must share their orders; a layer whose snapshots are poorer
    // than `modes` everywhere caps the order of that layer.
    let n_layers = runs.first().map_or(0, |r| r.1.len());
    let orders: Vec<usize> =
        (0..n_layers).map(|i| runs.iter().map(|r| r.1[i]).min().unwrap_or(0).min(modes)).collect();
    if orders.iter().any(|&n| n < modes) {
        log::warn!("snapshot rank caps the layer orders at {orders:?} (requested {modes})");
    }
    let mut entries = Vec::with_capacity(runs.len());
    let mut cost = Vec::with_capacity(runs.len());
    for ((set, _, t), p) in runs.into_iter().zip(points) {
        let mut b = extract_time_basis(&set, &orders)?;
        b.parameter = p.clone();
        entries.push(b);
        cost.push(t);
    }
    Ok((BasisArchive::new(domain.clone(), entries)?, cost))
}

/// Builds the archive, or loads the stored one (with no offline cost) when configured.
pub fn build_param_archive(cfg: &ParamConfig) -> Result<(BasisArchive, Vec<f64>)> {
    if let Some(dir) = &cfg.archive {
        return Ok((BasisArchive::load(dir)?, vec![]));
    }
    build_archive(&cfg.domain, &cfg.archive_points()?, cfg.modes, |p| cfg.com(p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub p: Vec<f64>,
    /// Euclidean distance from the box's lower corner in normalized coordinates.
    pub distance: f64,
    pub eps_interp_u: f64,
    pub eps_interp_du: f64,
    pub eps_exact_u: f64,
    pub eps_exact_du: f64,
    pub eps_naive_u: f64,
    pub eps_naive_du: f64,
    /// Online cost of the interpolated path (basis interpolation plus PODx).
    pub t_interp_s: f64,
    pub t_com_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamReport {
    pub queries: Vec<QueryResult>,
    pub eps_param_interp: f64,
    pub eps_param_exact: f64,
    pub eps_param_naive: f64,
    pub median_interp: f64,
    /// Share of queries where the naive basis does worse than the manifold one.
    pub naive_worse_fraction: f64,
    /// Largest principal angle between interpolated and stored bases at the archive points.
    pub archive_recovery_angle: f64,
    pub offline_cost_s: Vec<f64>,
}

impl ParamReport {
    pub fn metrics(&self) -> Metrics {
        let mean = |f: fn(&QueryResult) -> f64| {
            self.queries.iter().map(f).sum::<f64>() / self.queries.len().max(1) as f64
        };
        vec![
            ("eps_param_interp_u".into(), self.eps_param_interp),
            ("eps_param_exact_u".into(), self.eps_param_exact),
            ("eps_param_naive_u".into(), self.eps_param_naive),
            ("median_eps_inf_interp_u".into(), self.median_interp),
            ("naive_worse_fraction".into(), self.naive_worse_fraction),
            ("archive_recovery_angle".into(), self.archive_recovery_angle),
            ("mean_online_s".into(), mean(|q| q.t_interp_s)),
            ("mean_com_s".into(), mean(|q| q.t_com_s)),
            ("offline_cost_s".into(), self.offline_cost_s.iter().sum()),
        ]
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// PODx error of one basis against the complete model. A basis the solver
/// cannot handle counts as infinitely wrong rather than aborting the study.
fn basis_error(problem: &DimensionlessProblem, basis: Result<TimeBasis>, com: &FieldSolution, tol: f64) -> (f64, f64) {
    let run = || -> Result<(f64, f64)> {
        let basis = basis?;
        let sys = assemble_podx(problem, &basis)?;
        let chi: Vec<Vec<f64>> = com.layers.iter().map(|l| l.chi.clone()).collect();
        let f = solve_podx(&sys, &basis, &chi, tol)?;
        Ok((metrics::error_inf(&f, com, Component::U)?, metrics::error_inf(&f, com, Component::Dudchi)?))
    };
    run().unwrap_or_else(|e| {
        log::warn!("basis rejected: {e}");
        (f64::INFINITY, f64::INFINITY)
    })
}

/// Interpolated-basis errors and the online time: interpolation, assembly
/// and the field solve, not the error evaluation.
fn online_error(
    problem: &DimensionlessProblem,
    interp: &Interpolator,
    p: &[f64],
    com: &FieldSolution,
    tol: f64,
) -> (f64, f64, f64) {
    let start = Instant::now();
    let chi: Vec<Vec<f64>> = com.layers.iter().map(|l| l.chi.clone()).collect();
    let field = interp.interpolate(p).and_then(|b| solve_podx(&assemble_podx(problem, &b)?, &b, &chi, tol));
    let t = start.elapsed().as_secs_f64();
    let errors = field.and_then(|f| {
        Ok((metrics::error_inf(&f, com, Component::U)?, metrics::error_inf(&f, com, Component::Dudchi)?))
    });
    let (u, du) = errors.unwrap_or_else(|e| {
        log::warn!("basis rejected: {e}");
        (f64::INFINITY, f64::INFINITY)
    });
    (u, du, t)
}

/// Complete-model solutions at the query points, shared between archives.
pub fn param_references(cfg: &ParamConfig) -> Result<Vec<(Vec<f64>, FieldSolution)>> {
    cfg.query_points()?.into_par_iter().map(|p| Ok((p.clone(), cfg.com(&p)?))).collect()
}

pub fn verify_param(cfg: &ParamConfig, archive: &BasisArchive, offline_cost_s: Vec<f64>) -> Result<ParamReport> {
    verify_param_with(cfg, archive, &param_references(cfg)?, offline_cost_s)
}

pub fn verify_param_with(
    cfg: &ParamConfig,
    archive: &BasisArchive,
    references: &[(Vec<f64>, FieldSolution)],
    offline_cost_s: Vec<f64>,
) -> Result<ParamReport> {
    let interp = Interpolator::new(archive.clone())?;
    let lower = vec![0.0; cfg.domain.dim()];
    let w = crate::series::trapezoid_weights(archive.entries[0].n_snapshots(), cfg.dtau);

    let mut recovery = 0.0f64;
    for e in &archive.entries {
        let b = interp.interpolate(&e.parameter)?;
        for (a, s) in b.layers.iter().zip(&e.layers) {
            recovery = recovery.max(max_principal_angle(&a.psi, &s.psi, &w));
        }
    }

    let queries: Vec<QueryResult> = references
        .par_iter()
        .map(|(p, com)| {
            let problem = cfg.problem(p)?;

            let (iu, idu, t_interp) = online_error(&problem, &interp, p, com, cfg.bvp_tol);

            let exact = SnapshotSet::from_field(com)
                .and_then(|s| extract_time_basis(&s, &vec![cfg.modes; problem.n_layers()]));
            let (eu, edu) = basis_error(&problem, exact, com, cfg.bvp_tol);
            let (nu, ndu) = basis_error(&problem, interpolate_naive(archive, p), com, cfg.bvp_tol);
            let q = cfg.domain.normalize(p);
            let distance = q.iter().zip(&lower).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok(QueryResult {
                p: p.clone(),
                distance,
                eps_interp_u: iu,
                eps_interp_du: idu,
                eps_exact_u: eu,
                eps_exact_du: edu,
                eps_naive_u: nu,
                eps_naive_du: ndu,
                t_interp_s: t_interp,
                t_com_s: com.cpu_time,
            })
        })
        .collect::<Result<_>>()?;

    let col = |f: fn(&QueryResult) -> f64| queries.iter().map(f).collect::<Vec<_>>();
    let interp_u = col(|q| q.eps_interp_u);
    let worse = queries.iter().filter(|q| q.eps_naive_u > q.eps_interp_u).count();
    Ok(ParamReport {
        eps_param_interp: metrics::error_param(&interp_u)?,
        eps_param_exact: metrics::error_param(&col(|q| q.eps_exact_u))?,
        eps_param_naive: metrics::error_param(&col(|q| q.eps_naive_u))?,
        median_interp: median(&interp_u),
        naive_worse_fraction: worse as f64 / queries.len().max(1) as f64,
        archive_recovery_angle: recovery,
        offline_cost_s,
        queries,
    })
}

// --------------------------------------------------------------- design

/// Concrete, insulation and gypsum under hourly weather; the insulation and
/// the outside emissivity are the design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub concrete: Layer,
    pub gypsum: Layer,
    /// Axes `(k2, c2, d2, emissivity)`.
    pub domain: ParameterBox,
    pub h_inside: f64,
    pub convective: ConvectiveModel,
    pub setpoint: Setpoint,
    /// Hourly weather CSV; a synthetic year when absent.
    pub weather_file: Option<PathBuf>,
    pub hours: usize,
    pub t0: f64,
    pub intervals: Vec<usize>,
    pub tol: f64,
    /// Collocation residual tolerance of the online PODx solves.
    pub bvp_tol: f64,
    pub modes: usize,
    /// Order of the refined sweep used for the ranking stability check.
    pub check_modes: usize,
    pub n_basis: usize,
    pub n_points: usize,
    pub basis_points: Option<Vec<Vec<f64>>>,
    /// Stored archive directory used instead of building one.
    pub archive: Option<PathBuf>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            concrete: Layer { thickness: 0.20, conductivity: 1.65, heat_capacity: 2.2e6 },
            gypsum: Layer { thickness: 0.02, conductivity: 0.25, heat_capacity: 0.8e6 },
            domain: axis_box(&[("k2", 0.04, 0.10), ("c2", 0.21e6, 1.02e6), ("d2", 0.05, 0.30), ("emissivity", 0.6, 0.95)]),
            h_inside: 10.0,
            convective: ConvectiveModel::default(),
            setpoint: Setpoint::default(),
            weather_file: None,
            hours: 8760,
            t0: 3600.0,
            intervals: vec![20, 20, 10],
            tol: 1e-7,
            bvp_tol: 1e-4,
            modes: 5,
            check_modes: 10,
            n_basis: 5,
            n_points: 50,
            basis_points: None,
            archive: None,
        }
    }
}

impl DesignConfig {
    pub fn weather(&self) -> Result<Weather> {
        let w = match &self.weather_file {
            Some(path) => load_weather(path)?,
            None => synthetic_weather(self.hours),
        };
        if w.len() < self.hours + 1 {
            return Err(Error::invalid(format!("weather covers {} hours, {} requested", w.len() - 1, self.hours)));
        }
        Ok(w.truncate(self.hours))
    }

    pub fn boundary(&self, weather: &Weather) -> BoundarySeries {
        weather.clone().into_boundary(&self.setpoint)
    }

    /// Starts from the steady profile of the first hour's boundary data.
    pub fn problem(&self, bc: &BoundarySeries, p: &[f64]) -> Result<DimensionlessProblem> {
        if p.len() != 4 {
            return Err(Error::invalid("design points have four coordinates (k2, c2, d2, emissivity)"));
        }
        let wall = WallSpec {
            layers: vec![self.concrete, Layer::new(p[2], p[0], p[1])?, self.gypsum],
            emissivity: p[3],
            h_inside: self.h_inside,
            convective: self.convective,
        };
        let refs = References::from_boundary(bc, &[], self.t0)?;
        let prob = to_dimensionless(&wall, bc, &refs)?;
        let init = steady_state_profile(&prob, 0.0)?;
        Ok(prob.with_initial(init))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::new(self.intervals.clone())
    }

    pub fn times(&self, bc: &BoundarySeries) -> Result<Vec<f64>> {
        output_grid(bc.duration() / self.t0, bc.step() / self.t0)
    }

    pub fn archive_points(&self) -> Result<Vec<Vec<f64>>> {
        match &self.basis_points {
            Some(p) => Ok(p.clone()),
            None => sample_halton(&self.domain, self.n_basis),
        }
    }

    pub fn sweep_points(&self) -> Result<Vec<Vec<f64>>> {
        sample_halton_from(&self.domain, self.n_points, self.n_basis as u64)
    }
}

/// Complete design model at `p`.
pub fn design_com(cfg: &DesignConfig, bc: &BoundarySeries, p: &[f64]) -> Result<FieldSolution> {
    let problem = cfg.problem(bc, p)?;
    solve_com(&problem, &cfg.mesh()?, cfg.tol, &cfg.times(bc)?)
}

/// Builds the archive at `modes`, or loads the stored one when configured.
pub fn build_design_archive(cfg: &DesignConfig, bc: &BoundarySeries, modes: usize) -> Result<(BasisArchive, Vec<f64>)> {
    if let Some(dir) = &cfg.archive {
        return Ok((BasisArchive::load(dir)?, vec![]));
    }
    build_archive(&cfg.domain, &cfg.archive_points()?, modes, |p| design_com(cfg, bc, p))
}

/// Yearly consumed work from the inside surface gradient.
pub fn consumed_work_per_year(problem: &DimensionlessProblem, bc: &BoundarySeries, du_right: &[f64]) -> Result<f64> {
    let last = problem.n_layers() - 1;
    let scale = -problem.conductivity[last] * problem.refs.delta() / problem.thickness[last];
    let flux: Vec<f64> = du_right.iter().map(|d| scale * d).collect();
    if flux.len() != bc.len() {
        return Err(Error::invalid("surface series and boundary data differ in length"));
    }
    let ws = metrics::WorkSeries::new(bc.t_out.times(), flux, &bc.t_out.values, &bc.t_in.values)?;
    Ok(ws.per_year())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignPoint {
    pub p: Vec<f64>,
    /// Consumed work [MJ/m2/year].
    pub work: f64,
    pub online_s: f64,
}

/// Online phase: interpolated basis, PODx, consumed work. Order follows `points`.
pub fn design_sweep(
    cfg: &DesignConfig,
    bc: &BoundarySeries,
    interp: &Interpolator,
    points: &[Vec<f64>],
) -> Result<Vec<DesignPoint>> {
    points
        .par_iter()
        .map(|p| {
            let start = Instant::now();
            let problem = cfg.problem(bc, p)?;
            let basis = interp.interpolate(p)?;
            let sys = assemble_podx(&problem, &basis)?;
            let (_, du) = podx_right_surface(&sys, &basis, cfg.bvp_tol)?;
            let work = consumed_work_per_year(&problem, bc, &du)? / 1e6;
            Ok(DesignPoint { p: p.clone(), work, online_s: start.elapsed().as_secs_f64() })
        })
        .collect()
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN for fewer than two samples or a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub points: Vec<DesignPoint>,
    /// Same sweep at the refined order.
    pub check: Vec<f64>,
    pub best: usize,
    pub worst: usize,
    /// Rank correlation between the two orders over the lowest-work decile.
    pub top_decile_spearman: f64,
    /// Mean complete-model cost per archive point [s].
    pub t_lom_s: f64,
    /// Mean online cost per sweep point relative to one complete run.
    pub cost_ratio: f64,
}

impl DesignReport {
    pub fn metrics(&self) -> Metrics {
        let w: Vec<f64> = self.points.iter().map(|p| p.work).collect();
        vec![
            ("work_min".into(), w[self.best]),
            ("work_max".into(), w[self.worst]),
            ("top_decile_spearman".into(), self.top_decile_spearman),
            ("t_lom_s".into(), self.t_lom_s),
            ("cost_ratio".into(), self.cost_ratio),
        ]
    }
}

/// Offline archive at the refined order, sweeps at both orders.
pub fn design(cfg: &DesignConfig) -> Result<DesignReport> {
    let weather = cfg.weather()?;
    let bc = cfg.boundary(&weather);
    let (archive, cost) = build_design_archive(cfg, &bc, cfg.modes.max(cfg.check_modes))?;
    design_with_archive(cfg, &bc, &archive, &cost)
}

pub fn design_with_archive(
    cfg: &DesignConfig,
    bc: &BoundarySeries,
    archive: &BasisArchive,
    offline_cost_s: &[f64],
) -> Result<DesignReport> {
    let truncate = |n: usize| -> Result<Interpolator> {
        let entries = archive
            .entries
            .iter()
            .map(|e| e.truncated(&e.orders().into_iter().map(|m| m.min(n)).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Interpolator::new(BasisArchive::new(archive.domain.clone(), entries)?)
    };
    let points = cfg.sweep_points()?;
    let base = design_sweep(cfg, bc, &truncate(cfg.modes)?, &points)?;
    let check: Vec<f64> =
        design_sweep(cfg, bc, &truncate(cfg.check_modes)?, &points)?.into_iter().map(|d| d.work).collect();

    let w: Vec<f64> = base.iter().map(|d| d.work).collect();
    let order = {
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| check[a].total_cmp(&check[b]));
        idx
    };
    let decile: Vec<usize> = order[..(w.len() / 10).max(2).min(w.len())].to_vec();
    let top_a: Vec<f64> = decile.iter().map(|&i| w[i]).collect();
    let top_b: Vec<f64> = decile.iter().map(|&i| check[i]).collect();
    let argmin = (0..w.len()).min_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    let argmax = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    let t_lom = offline_cost_s.iter().sum::<f64>() / offline_cost_s.len().max(1) as f64;
    let online = base.iter().map(|d| d.online_s).sum::<f64>() / base.len().max(1) as f64;
    Ok(DesignReport {
        points: base,
        check,
        best: argmin,
        worst: argmax,
        top_decile_spearman: spearman(&top_a, &top_b),
        t_lom_s: t_lom,
        cost_ratio: if t_lom > 0.0 { online / t_lom } else { f64::NAN },
    })
}

// --------------------------------------------------------------- config

/// A JSON document `{"case": "<preset>", ...overrides}`.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Mono(MonoConfig),
    Multilayer(MultilayerConfig),
    Param(ParamConfig),
    Design(DesignConfig),
}

impl RunConfig {
    pub fn case(&self) -> &'static str {
        match self {
            RunConfig::Mono(_) => "mono",
            RunConfig::Multilayer(_) => "multilayer",
            RunConfig::Param(_) => "param",
            RunConfig::Design(_) => "design",
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text)?;
        let obj = v.as_object_mut().ok_or_else(|| Error::invalid("config must be a JSON object"))?;
        let case = match obj.remove("case") {
            Some(serde_json::Value::String(s)) => s,
            _ => return Err(Error::invalid("config needs a string field `case`")),
        };
        let cfg = match case.as_str() {
            "mono" => RunConfig::Mono(serde_json::from_value(v)?),
            "multilayer" => RunConfig::Multilayer(serde_json::from_value(v)?),
            "param" => RunConfig::Param(serde_json::from_value(v)?),
            "design" => RunConfig::Design(serde_json::from_value(v)?),
            other => return Err(Error::invalid(format!("unknown case `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut v = match self {
            RunConfig::Mono(c) => serde_json::to_value(c)?,
            RunConfig::Multilayer(c) => serde_json::to_value(c)?,
            RunConfig::Param(c) => serde_json::to_value(c)?,
            RunConfig::Design(c) => serde_json::to_value(c)?,
        };
        v.as_object_mut().expect("configs serialize as objects").insert("case".into(), self.case().into());
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("`{name}` must be positive, got {x}")))
            }
        };
        let nonzero = |name: &str, n: usize| {
            if n > 0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("`{name}` must be at least 1")))
            }
        };
        match self {
            RunConfig::Mono(c) => {
                c.layer.validate()?;
                for (n, x) in [("h_left", c.h_left), ("h_right", c.h_right), ("days", c.days), ("t0", c.t0)] {
                    positive(n, x)?;
                }
                for (n, x) in [("bc_step_s", c.bc_step_s), ("dchi", c.dchi), ("dtau", c.dtau), ("tol", c.tol)] {
                    positive(n, x)?;
                }
                nonzero("modes", c.modes)
            }
            RunConfig::Multilayer(c) => {
                for l in &c.layers {
                    l.validate()?;
                }
                if c.t_max_c <= c.t_min_c {
                    return Err(Error::invalid("`t_max_c` must exceed `t_min_c`"));
                }
                for (n, x) in [("hours", c.hours), ("t0", c.t0), ("dchi", c.dchi), ("dtau", c.dtau), ("tol", c.tol)] {
                    positive(n, x)?;
                }
                nonzero("modes", c.modes)?;
                nonzero("series_modes", c.series_modes)
            }
            RunConfig::Param(c) => {
                c.brick.validate()?;
                c.domain.validate()?;
                if c.domain.dim() != 3 {
                    return Err(Error::invalid("the param box has three axes (k2, d2, h_left)"));
                }
                for (n, x) in [("heat_capacity_2", c.heat_capacity_2), ("h_right", c.h_right), ("t0", c.t0)] {
                    positive(n, x)?;
                }
                for (n, x) in [("tau_final", c.tau_final), ("dtau", c.dtau), ("dchi", c.dchi), ("tol", c.tol), ("bvp_tol", c.bvp_tol)] {
                    positive(n, x)?;
                }
                nonzero("modes", c.modes)?;
                nonzero("n_basis", c.n_basis)?;
                check_archive(c.archive.as_deref())?;
                check_points(&c.domain, c.basis_points.as_deref())
            }
            RunConfig::Design(c) => {
                c.concrete.validate()?;
                c.gypsum.validate()?;
                c.domain.validate()?;
                if c.domain.dim() != 4 {
                    return Err(Error::invalid("the design box has four axes (k2, c2, d2, emissivity)"));
                }
                if let Some(path) = &c.weather_file {
                    if !path.is_file() {
                        return Err(Error::invalid(format!("weather file {} does not exist", path.display())));
                    }
                }
                if c.intervals.len() != 3 {
                    return Err(Error::invalid("`intervals` needs one entry per layer (3)"));
                }
                positive("t0", c.t0)?;
                positive("tol", c.tol)?;
                positive("bvp_tol", c.bvp_tol)?;
                nonzero("hours", c.hours)?;
                nonzero("modes", c.modes)?;
                nonzero("n_basis", c.n_basis)?;
                nonzero("n_points", c.n_points)?;
                check_archive(c.archive.as_deref())?;
                check_points(&c.domain, c.basis_points.as_deref())
            }
        }
    }
}

fn check_archive(dir: Option<&std::path::Path>) -> Result<()> {
    match dir {
        Some(d) if !d.join("archive.json").is_file() => {
            Err(Error::invalid(format!("{} holds no basis archive", d.display())))
        }
        _ => Ok(()),
    }
}

fn check_points(domain: &ParameterBox, points: Option<&[Vec<f64>]>) -> Result<()> {
    for p in points.unwrap_or_default() {
        if p.len() != domain.dim() || !domain.contains(p) {
            return Err(Error::invalid(format!("basis point {p:?} lies outside the parameter box")));
        }
    }
    Ok(())
}
