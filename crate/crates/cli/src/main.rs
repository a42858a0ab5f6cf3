//! `wallpod` command-line driver.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use wallpod::cases::{self, DesignConfig, MonoConfig, MultilayerConfig, ParamConfig, RunConfig};
use wallpod::climate::write_weather;
use wallpod::field::fmt_g17;
use wallpod::manifold::Interpolator;
use wallpod::metrics::{self, write_metric_csv, WorkSeries};
use wallpod::pod::{assemble_podx, podx_right_surface};
use wallpod::Error;

#[derive(Parser, Debug)]
#[command(name = "wallpod", version, about = "Reduced-order models of heat transfer through building walls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config with a `case` preset; the command's own preset when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parameter sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the solver tolerance of the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Overrides the number of POD modes per layer.
    #[arg(long, global = true)]
    modes: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Single layer: complete model, PODt and PODx against a refined reference.
    VerifyMono,
    /// Two layers: PODx against the series solution.
    VerifyMultilayer,
    /// Parametric case: interpolated, exact and naive bases over Halton queries.
    VerifyParam,
    /// Offline phase: complete runs at the archive points, bases written to `<out>/archive`.
    BuildBasis,
    /// Online design sweep and consumed-work ranking.
    Design,
    /// Field, boundary and work-rate CSVs for plotting.
    Export,
}

/// Failure split by exit code.
enum Failure {
    Config(String),
    Numerical(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            match e {
                Error::Invalid(_) | Error::Parse { .. } | Error::Json(_) => Failure::Config(e.to_string()),
                _ => Failure::Other(e.to_string()),
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn default_case(cmd: Command) -> RunConfig {
    match cmd {
        Command::VerifyMono | Command::Export => RunConfig::Mono(MonoConfig::default()),
        Command::VerifyMultilayer => RunConfig::Multilayer(MultilayerConfig::default()),
        Command::VerifyParam | Command::BuildBasis => RunConfig::Param(ParamConfig::default()),
        Command::Design => RunConfig::Design(DesignConfig::default()),
    }
}

fn load_config(cli: &Cli) -> Outcome<(RunConfig, String)> {
    let (mut cfg, id) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let id = path.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned());
            (RunConfig::from_json(&text)?, id)
        }
        None => {
            let cfg = default_case(cli.command);
            let id = cfg.case().to_string();
            (cfg, id)
        }
    };
    apply_overrides(&mut cfg, cli.tol, cli.modes);
    cfg.validate()?;
    Ok((cfg, id))
}

fn apply_overrides(cfg: &mut RunConfig, tol: Option<f64>, modes: Option<usize>) {
    macro_rules! set {
        ($c:expr) => {{
            if let Some(t) = tol {
                $c.tol = t;
            }
            if let Some(n) = modes {
                $c.modes = n;
            }
        }};
    }
    match cfg {
        RunConfig::Mono(c) => set!(c),
        RunConfig::Multilayer(c) => set!(c),
        RunConfig::Param(c) => set!(c),
        RunConfig::Design(c) => {
            set!(c);
            c.check_modes = c.check_modes.max(c.modes);
        }
    }
}

fn wrong_case(cmd: &str, cfg: &RunConfig, expected: &str) -> Failure {
    Failure::Config(format!("`{cmd}` needs a `{expected}` config, got `{}`", cfg.case()))
}

fn run(cli: &Cli) -> Outcome<()> {
    let (cfg, id) = load_config(cli)?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Other(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("config.json"), cfg.to_json()?)?;
    let out = cli.out.as_path();
    match (cli.command, &cfg) {
        (Command::VerifyMono, RunConfig::Mono(c)) => verify_mono(c, out, &id),
        (Command::VerifyMono, _) => Err(wrong_case("verify-mono", &cfg, "mono")),
        (Command::VerifyMultilayer, RunConfig::Multilayer(c)) => verify_multilayer(c, out, &id),
        (Command::VerifyMultilayer, _) => Err(wrong_case("verify-multilayer", &cfg, "multilayer")),
        (Command::VerifyParam, RunConfig::Param(c)) => verify_param(c, out, &id),
        (Command::VerifyParam, _) => Err(wrong_case("verify-param", &cfg, "param")),
        (Command::BuildBasis, RunConfig::Param(c)) => {
            let (archive, cost) = cases::build_param_archive(c)?;
            save_archive(&archive, &cost, out, &id)
        }
        (Command::BuildBasis, RunConfig::Design(c)) => {
            let bc = c.boundary(&c.weather()?);
            let (archive, cost) = cases::build_design_archive(c, &bc, c.modes.max(c.check_modes))?;
            save_archive(&archive, &cost, out, &id)
        }
        (Command::BuildBasis, _) => Err(wrong_case("build-basis", &cfg, "param` or `design")),
        (Command::Design, RunConfig::Design(c)) => design(c, out, &id),
        (Command::Design, _) => Err(wrong_case("design", &cfg, "design")),
        (Command::Export, _) => export(&cfg, out),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    fs::write(path, serde_json::to_string_pretty(value).map_err(Error::from)?)?;
    Ok(())
}

/// Columns of equal length under the given header.
fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Outcome<()> {
    let mut text = header.join(",");
    text.push('\n');
    let n = columns.first().map_or(0, |c| c.len());
    for k in 0..n {
        let row: Vec<String> = columns.iter().map(|c| fmt_g17(c[k])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn verify_mono(cfg: &MonoConfig, out: &Path, id: &str) -> Outcome<()> {
    let report = cases::verify_mono(cfg)?;
    write_metric_csv(out.join("metrics.csv"), &report.metrics(), id)?;
    write_json(&out.join("report.json"), &report)?;
    let mut header = vec!["tau".to_string()];
    let mut cols: Vec<&[f64]> = vec![&report.times];
    for (name, e) in &report.eps2_u {
        header.push(format!("eps2_u_{name}"));
        cols.push(e);
    }
    for (name, e) in &report.eps2_du {
        header.push(format!("eps2_dudchi_{name}"));
        cols.push(e);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_columns(&out.join("eps2.csv"), &header, &cols)?;
    for r in &report.rows {
        log::info!(
            "{:>4} N={:<2} eps_inf u {:.3e} du {:.3e} dof {:>6} cpu {:.3e} s",
            r.model,
            r.modes,
            r.eps_inf_u,
            r.eps_inf_du,
            r.dof,
            r.cpu_s
        );
    }
    Ok(())
}

fn verify_multilayer(cfg: &MultilayerConfig, out: &Path, id: &str) -> Outcome<()> {
    let report = cases::verify_multilayer(cfg)?;
    write_metric_csv(out.join("metrics.csv"), &report.metrics(), id)?;
    write_columns(
        &out.join("eps2.csv"),
        &["tau", "eps2_u", "eps2_dudchi"],
        &[&report.times, &report.eps2_u, &report.eps2_du],
    )?;
    log::info!("max eps2 u {:.3e} du {:.3e}", report.max_eps2_u, report.max_eps2_du);
    Ok(())
}

fn verify_param(cfg: &ParamConfig, out: &Path, id: &str) -> Outcome<()> {
    let (archive, cost) = cases::build_param_archive(cfg)?;
    let report = cases::verify_param(cfg, &archive, cost)?;
    write_metric_csv(out.join("metrics.csv"), &report.metrics(), id)?;
    let mut text = String::from(
        "k2,d2,h_left,distance,eps_interp_u,eps_interp_dudchi,eps_exact_u,eps_exact_dudchi,eps_naive_u,eps_naive_dudchi,t_interp_s,t_com_s\n",
    );
    for q in &report.queries {
        let vals = [
            q.p[0],
            q.p[1],
            q.p[2],
            q.distance,
            q.eps_interp_u,
            q.eps_interp_du,
            q.eps_exact_u,
            q.eps_exact_du,
            q.eps_naive_u,
            q.eps_naive_du,
            q.t_interp_s,
            q.t_com_s,
        ];
        text.push_str(&vals.iter().map(|v| fmt_g17(*v)).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    fs::write(out.join("queries.csv"), text)?;
    log::info!(
        "eps_param interpolated {:.3e} exact {:.3e} naive {:.3e}; median {:.3e}",
        report.eps_param_interp,
        report.eps_param_exact,
        report.eps_param_naive,
        report.median_interp
    );
    Ok(())
}

fn save_archive(archive: &wallpod::manifold::BasisArchive, cost: &[f64], out: &Path, id: &str) -> Outcome<()> {
    let fit = std::time::Instant::now();
    Interpolator::new(archive.clone())?;
    let t_fit = fit.elapsed().as_secs_f64();
    archive.save(out.join("archive"))?;
    let mut rows: Vec<(String, f64)> =
        cost.iter().enumerate().map(|(j, c)| (format!("com_s_entry_{j}"), *c)).collect();
    rows.push(("rbf_fit_s".into(), t_fit));
    rows.push(("offline_s".into(), cost.iter().sum::<f64>() + t_fit));
    write_metric_csv(out.join("offline_cost.csv"), &rows, id)?;
    log::info!("archive of {} entries, offline {:.2} s", archive.len(), cost.iter().sum::<f64>() + t_fit);
    Ok(())
}

fn design(cfg: &DesignConfig, out: &Path, id: &str) -> Outcome<()> {
    let report = cases::design(cfg)?;
    write_metric_csv(out.join("metrics.csv"), &report.metrics(), id)?;
    let mut order: Vec<usize> = (0..report.points.len()).collect();
    order.sort_by(|&a, &b| report.points[a].work.total_cmp(&report.points[b].work));
    let names: Vec<&str> = cfg.domain.axes.iter().map(|a| a.name.as_str()).collect();
    let mut text = format!("rank,index,{},work_MJ_m2_yr,work_check_MJ_m2_yr,online_s\n", names.join(","));
    for (rank, &i) in order.iter().enumerate() {
        let d = &report.points[i];
        let p: Vec<String> = d.p.iter().map(|v| fmt_g17(*v)).collect();
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rank + 1,
            i,
            p.join(","),
            fmt_g17(d.work),
            fmt_g17(report.check[i]),
            fmt_g17(d.online_s)
        ));
    }
    fs::write(out.join("ranking.csv"), text)?;
    log::info!(
        "best {:?} at {:.3} MJ/m2/yr, worst {:?} at {:.3}",
        report.points[report.best].p,
        report.points[report.best].work,
        report.points[report.worst].p,
        report.points[report.worst].work
    );
    Ok(())
}

/// Histogram of `values` over `bins` equal bins.
fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![(lo, hi, values.len())];
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for v in values {
        counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * w, lo + (i + 1) as f64 * w, c)).collect()
}

fn export(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    match cfg {
        RunConfig::Mono(c) => {
            let run = cases::MonoRun::new(c)?;
            let d = &run.problem.thickness;
            run.com.write_csv(out.join("field_com.csv"), d)?;
            run.reference.write_csv(out.join("field_reference.csv"), d)?;
            run.podx(c.modes, c.tol)?.0.write_csv(out.join("field_podx.csv"), d)?;
            run.podt(c.modes, c.tol)?.0.write_csv(out.join("field_podt.csv"), d)?;
            boundary_csv(&c.boundary()?, &out.join("boundary.csv"))
        }
        RunConfig::Multilayer(c) => {
            let problem = c.problem()?;
            let mesh = wallpod::lom::Mesh::uniform(c.dchi, 2)?;
            let times = wallpod::lom::output_grid(problem.tau_final, c.dtau)?;
            let com = wallpod::lom::solve_com(&problem, &mesh, c.tol, &times)?;
            let (_, podx) = cases::podx_from_snapshots(&problem, &com, c.modes, c.tol, true)?;
            let series = c.series(&problem, c.series_modes)?.field(&[mesh.chi(0), mesh.chi(1)], &times)?;
            com.write_csv(out.join("field_com.csv"), &problem.thickness)?;
            podx.write_csv(out.join("field_podx.csv"), &problem.thickness)?;
            series.write_csv(out.join("field_analytical.csv"), &problem.thickness)?;
            Ok(())
        }
        RunConfig::Param(c) => {
            let p = c.domain.lower();
            let problem = c.problem(&p)?;
            let com = c.com(&p)?;
            let (_, podx) = cases::podx_from_snapshots(&problem, &com, c.modes, c.tol, false)?;
            com.write_csv(out.join("field_com.csv"), &problem.thickness)?;
            podx.write_csv(out.join("field_podx.csv"), &problem.thickness)?;
            boundary_csv(&c.boundary()?, &out.join("boundary.csv"))
        }
        RunConfig::Design(c) => {
            let weather = c.weather()?;
            write_weather(out.join("weather.csv"), &weather)?;
            let bc = c.boundary(&weather);
            let (archive, _) = cases::build_design_archive(c, &bc, c.modes)?;
            let p = c.sweep_points()?.into_iter().next().ok_or_else(|| Failure::Config("empty sweep".into()))?;
            let problem = c.problem(&bc, &p)?;
            let basis = Interpolator::new(archive)?.interpolate(&p)?;
            let sys = assemble_podx(&problem, &basis)?;
            let (_, du) = podx_right_surface(&sys, &basis, c.bvp_tol)?;
            let last = problem.n_layers() - 1;
            let scale = -problem.conductivity[last] * problem.refs.delta() / problem.thickness[last];
            let flux: Vec<f64> = du.iter().map(|d| scale * d).collect();
            let ws = WorkSeries::new(bc.t_out.times(), flux, &bc.t_out.values, &bc.t_in.values)?;
            write_columns(
                &out.join("work_series.csv"),
                &["time_s", "flux_Wm2", "rate_Wm2", "consumed_Jm2"],
                &[&ws.time_s, &ws.flux, &ws.rate, &ws.consumed],
            )?;
            let mut text = String::from("bin_lo_Wm2,bin_hi_Wm2,count\n");
            for (a, b, n) in histogram(&ws.rate, 40) {
                text.push_str(&format!("{},{},{n}\n", fmt_g17(a), fmt_g17(b)));
            }
            fs::write(out.join("rate_histogram.csv"), text)?;
            log::info!("work at {:?}: {:.3} MJ/m2/yr", p, metrics::per_year(ws.total(), bc.duration()) / 1e6);
            Ok(())
        }
    }
}

fn boundary_csv(bc: &wallpod::domain::BoundarySeries, path: &Path) -> Outcome<()> {
    write_columns(
        path,
        &["time_s", "T_out_K", "T_in_K", "v_wind_ms", "q_sw_Wm2", "T_sky_K"],
        &[&bc.t_out.times(), &bc.t_out.values, &bc.t_in.values, &bc.v_wind.values, &bc.q_sw.values, &bc.t_sky.values],
    )
}
