//! Climate ingestion, surface transfer coefficients, the indoor setpoint law,
//! steady-state initial profiles and parameter-space sampling.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{
    BoundarySeries, ConvectiveModel, DimensionlessProblem, InitialProfile, SurfaceCondition, STEFAN_BOLTZMANN,
};
use crate::error::{Error, Result};
use crate::series::Series;

pub const KELVIN: f64 = 273.15;
pub const SECONDS_PER_HOUR: f64 = 3600.0;

pub const WEATHER_HEADER: [&str; 5] = ["hour", "T_out_C", "v_wind_ms", "q_sw_Wm2", "T_sky_C"];

/// Hourly climate series as read from disk, converted to kelvin. Times in
/// seconds since the first row.
#[derive(Debug, Clone, PartialEq)]
pub struct Weather {
    pub t_out: Series,
    pub v_wind: Series,
    pub q_sw: Series,
    pub t_sky: Series,
}

impl Weather {
    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }

    /// Completes the boundary data with the indoor setpoint law.
    pub fn into_boundary(self, setpoint: &Setpoint) -> BoundarySeries {
        let t_in = indoor_setpoint(setpoint, &self.t_out);
        BoundarySeries { t_out: self.t_out, t_in, v_wind: self.v_wind, q_sw: self.q_sw, t_sky: self.t_sky }
    }

    /// First `hours + 1` samples.
    pub fn truncate(&self, hours: usize) -> Weather {
        let cut = |s: &Series| Series {
            start: s.start,
            step: s.step,
            values: s.values[..(hours + 1).min(s.len())].to_vec(),
        };
        Weather { t_out: cut(&self.t_out), v_wind: cut(&self.v_wind), q_sw: cut(&self.q_sw), t_sky: cut(&self.t_sky) }
    }
}

struct WeatherRow {
    hour: f64,
    t_out: f64,
    v_wind_ms: f64,
    q_sw_wm2: f64,
    t_sky: f64,
}

pub fn load_weather(path: impl AsRef<Path>) -> Result<Weather> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_weather(file, path)
}

pub fn read_weather(reader: impl std::io::Read, path: &Path) -> Result<Weather> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != WEATHER_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header {:?}, found {:?}", WEATHER_HEADER.join(","), names.join(",")),
        });
    }
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };

    let (mut t_out, mut wind, mut q, mut sky) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut first_hour = None;
    let mut previous: Option<f64> = None;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let row = WeatherRow {
            hour: field(&rec, 0).map_err(|m| parse_err(line, m))?,
            t_out: field(&rec, 1).map_err(|m| parse_err(line, m))?,
            v_wind_ms: field(&rec, 2).map_err(|m| parse_err(line, m))?,
            q_sw_wm2: field(&rec, 3).map_err(|m| parse_err(line, m))?,
            t_sky: field(&rec, 4).map_err(|m| parse_err(line, m))?,
        };
        if let Some(prev) = previous {
            if (row.hour - prev - 1.0f64).abs() > 1e-9 {
                return Err(parse_err(line, format!("non-uniform step: hour {} follows {}", row.hour, prev)));
            }
        }
        if row.q_sw_wm2 < 0.0 {
            return Err(parse_err(line, format!("negative short-wave flux {}", row.q_sw_wm2)));
        }
        if row.v_wind_ms < 0.0 {
            return Err(parse_err(line, format!("negative wind speed {}", row.v_wind_ms)));
        }
        first_hour.get_or_insert(row.hour);
        previous = Some(row.hour);
        t_out.push(row.t_out + KELVIN);
        wind.push(row.v_wind_ms);
        q.push(row.q_sw_wm2);
        sky.push(row.t_sky + KELVIN);
    }
    if t_out.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let mk = |v: Vec<f64>| Series { start: 0.0, step: SECONDS_PER_HOUR, values: v };
    Ok(Weather { t_out: mk(t_out), v_wind: mk(wind), q_sw: mk(q), t_sky: mk(sky) })
}

fn field(rec: &csv::StringRecord, i: usize) -> std::result::Result<f64, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing column {}", WEATHER_HEADER[i]))?;
    let v: f64 = raw.parse().map_err(|_| format!("column {}: cannot parse {:?}", WEATHER_HEADER[i], raw))?;
    if !v.is_finite() {
        return Err(format!("column {}: non-finite value", WEATHER_HEADER[i]));
    }
    Ok(v)
}

pub fn write_weather(path: impl AsRef<Path>, w: &Weather) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(WEATHER_HEADER)?;
    for k in 0..w.len() {
        wtr.write_record(&[
            k.to_string(),
            format!("{:.4}", w.t_out.values[k] - KELVIN),
            format!("{:.4}", w.v_wind.values[k]),
            format!("{:.4}", w.q_sw.values[k]),
            format!("{:.4}", w.t_sky.values[k] - KELVIN),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn convective_coefficient(model: &ConvectiveModel, v_wind: &Series) -> Result<Series> {
    if v_wind.min() < 0.0 {
        return Err(Error::invalid("negative wind speed"));
    }
    Ok(v_wind.map(|v| model.h0 + model.h1 * v / model.v0))
}

/// Linearised long-wave coefficient `4 eps sigma T_sky^3`.
pub fn radiative_coefficient(emissivity: f64, t_sky: &Series) -> Result<Series> {
    if !(0.0..=1.0).contains(&emissivity) {
        return Err(Error::invalid(format!("emissivity {emissivity} outside [0, 1]")));
    }
    Ok(t_sky.map(|t| 4.0 * emissivity * STEFAN_BOLTZMANN * t * t * t))
}

/// Indoor temperature ramp between heating and cooling setpoints, all in
/// degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub outdoor_min: f64,
    pub outdoor_max: f64,
    pub set_min: f64,
    pub set_max: f64,
}

impl Default for Setpoint {
    fn default() -> Self {
        Self { outdoor_min: 17.0, outdoor_max: 27.0, set_min: 19.0, set_max: 24.0 }
    }
}

impl Setpoint {
    pub fn celsius(&self, t_out: f64) -> f64 {
        if t_out <= self.outdoor_min {
            self.set_min
        } else if t_out >= self.outdoor_max {
            self.set_max
        } else {
            self.set_min
                + (t_out - self.outdoor_min) / (self.outdoor_max - self.outdoor_min) * (self.set_max - self.set_min)
        }
    }
}

/// `t_out` in kelvin, result in kelvin.
pub fn indoor_setpoint(setpoint: &Setpoint, t_out: &Series) -> Series {
    t_out.map(|t| setpoint.celsius(t - KELVIN) + KELVIN)
}

/// Piecewise-linear static solution of the layered problem with the boundary
/// data at `tau`. Exact for the discrete schemes as well, so the returned
/// profile carries two samples per layer.
pub fn steady_state_profile(problem: &DimensionlessProblem, tau: f64) -> Result<InitialProfile> {
    let (a, s) = steady_state_coefficients(problem, tau)?;
    Ok(InitialProfile { layers: a.iter().zip(&s).map(|(&a, &s)| vec![a, a + s]).collect() })
}

/// Intercepts and slopes `u_i = a_i + s_i chi` of the static solution.
pub fn steady_state_coefficients(problem: &DimensionlessProblem, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = problem.n_layers();
    let dim = 2 * n;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let (ia, is) = (|i: usize| 2 * i, |i: usize| 2 * i + 1);

    let mut robin_total = 0.0;
    match &problem.left {
        SurfaceCondition::Robin(r) => {
            let b = r.coefficient().eval(tau);
            robin_total += b;
            m[(0, is(0))] = -1.0;
            m[(0, ia(0))] = b;
            rhs[0] = r.source().eval(tau);
        }
        SurfaceCondition::Dirichlet(g) => {
            robin_total += 1.0;
            m[(0, ia(0))] = 1.0;
            rhs[0] = g.eval(tau);
        }
    }
    let mut row = 1;
    for i in 0..n - 1 {
        m[(row, ia(i))] = 1.0;
        m[(row, is(i))] = 1.0;
        m[(row, ia(i + 1))] = -1.0;
        row += 1;
        m[(row, is(i))] = 1.0;
        m[(row, is(i + 1))] = -problem.kappa[i];
        row += 1;
    }
    let last = n - 1;
    match &problem.right {
        SurfaceCondition::Robin(r) => {
            let b = r.coefficient().eval(tau);
            robin_total += b;
            m[(row, is(last))] = 1.0 + b;
            m[(row, ia(last))] = b;
            rhs[row] = r.source().eval(tau);
        }
        SurfaceCondition::Dirichlet(g) => {
            robin_total += 1.0;
            m[(row, ia(last))] = 1.0;
            m[(row, is(last))] = 1.0;
            rhs[row] = g.eval(tau);
        }
    }
    if robin_total <= 0.0 {
        return Err(Error::Singular("steady state is undetermined with zero Biot numbers on both sides".into()));
    }
    let sol = m.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular("steady-state system".into()))?;
    let residual = (&m * &sol - &rhs).amax();
    if residual > 1e-10 * (1.0 + rhs.amax()) {
        return Err(Error::Singular(format!("steady-state residual {residual:.3e}")));
    }
    Ok(((0..n).map(|i| sol[ia(i)]).collect(), (0..n).map(|i| sol[is(i)]).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Axis-aligned parameter domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub axes: Vec<Axis>,
}

impl ParameterBox {
    pub fn new(axes: Vec<(&str, f64, f64)>) -> Result<Self> {
        let b = Self { axes: axes.into_iter().map(|(n, lo, hi)| Axis { name: n.into(), min: lo, max: hi }).collect() };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::invalid("parameter box has no axes"));
        }
        for a in &self.axes {
            if !(a.min < a.max) {
                return Err(Error::invalid(format!("axis {} has min >= max", a.name)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn normalize(&self, p: &[f64]) -> Vec<f64> {
        self.axes.iter().zip(p).map(|(a, &x)| (x - a.min) / (a.max - a.min)).collect()
    }

    pub fn denormalize(&self, q: &[f64]) -> Vec<f64> {
        self.axes.iter().zip(q).map(|(a, &x)| a.min + x * (a.max - a.min)).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.axes.iter().zip(p).all(|(a, &x)| x >= a.min && x <= a.max)
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.min).collect()
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// `n` Halton points scaled into `domain`, indices `skip + 1 ..= skip + n`.
pub fn sample_halton_from(domain: &ParameterBox, n: usize, skip: u64) -> Result<Vec<Vec<f64>>> {
    domain.validate()?;
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let bases = primes(domain.dim());
    Ok((1..=n as u64)
        .map(|i| {
            let q: Vec<f64> = bases.iter().map(|&b| radical_inverse(i + skip, b)).collect();
            domain.denormalize(&q)
        })
        .collect())
}

pub fn sample_halton(domain: &ParameterBox, n: usize) -> Result<Vec<Vec<f64>>> {
    sample_halton_from(domain, n, 0)
}

/// A deterministic temperate-climate stand-in used by the demo presets when
/// no weather file is supplied: seasonal and daily cycles, a few slow
/// "weather" oscillations, afternoon sun on a west facade and a sky
/// temperature 11 K below the air. Experimental; not a substitute for real
/// climate data.
pub fn synthetic_weather(hours: usize) -> Weather {
    let n = hours + 1;
    let mut t_out = Vec::with_capacity(n);
    let mut wind = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let mut sky = Vec::with_capacity(n);
    for h in 0..n {
        let t = h as f64;
        let day = t / 24.0;
        let hod = t % 24.0;
        let season = -(2.0 * PI * (day - 15.0) / 365.0).cos(); // -1 mid-January, +1 mid-July
        let weather = 2.5 * (2.0 * PI * day / 6.3).sin() + 1.5 * (2.0 * PI * day / 3.7 + 1.0).sin()
            + 1.0 * (2.0 * PI * day / 11.9 + 2.0).sin();
        let daily = (4.0 + 1.5 * season) * (2.0 * PI * (hod - 9.0) / 24.0).sin();
        let ta = 12.0 + 8.0 * season + daily + weather;
        let v = (3.5 + 1.5 * (2.0 * PI * day / 4.3).sin() + 1.0 * (2.0 * PI * day / 7.9 + 0.5).sin()
            + 0.6 * (2.0 * PI * hod / 24.0).sin())
        .max(0.2);
        let day_length = 12.0 + 4.0 * season;
        let sunrise = 12.0 - 0.5 * day_length;
        let sunset = 12.0 + 0.5 * day_length;
        let clear = 0.65 + 0.35 * (2.0 * PI * day / 5.1 + 0.3).sin();
        let diffuse = if hod > sunrise && hod < sunset {
            (50.0 + 30.0 * season) * (PI * (hod - sunrise) / day_length).sin()
        } else {
            0.0
        };
        let direct = if hod > 12.0 && hod < sunset {
            (380.0 + 120.0 * season) * clear * (PI * (hod - 12.0) / (sunset - 12.0)).sin().powf(1.5)
        } else {
            0.0
        };
        t_out.push(ta + KELVIN);
        wind.push(v);
        q.push(diffuse + direct);
        sky.push(ta - 11.0 + KELVIN);
    }
    let mk = |v: Vec<f64>| Series { start: 0.0, step: SECONDS_PER_HOUR, values: v };
    Weather { t_out: mk(t_out), v_wind: mk(wind), q_sw: mk(q), t_sky: mk(sky) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{InitialProfile, References, RobinData};

    #[test]
    fn convective_examples() {
        let m = ConvectiveModel::default();
        let v = Series::new(0.0, 1.0, vec![0.0, 1.0, 10.0]).unwrap();
        let h = convective_coefficient(&m, &v).unwrap();
        assert!((h.values[0] - 5.82).abs() < 1e-12);
        assert!((h.values[1] - 7.21).abs() < 1e-12);
        assert!((h.values[2] - 19.72).abs() < 1e-12);
        let bad = Series::new(0.0, 1.0, vec![-1.0]).unwrap();
        assert!(convective_coefficient(&m, &bad).is_err());
    }

    #[test]
    fn radiative_examples() {
        let sky = Series::new(0.0, 1.0, vec![283.15]).unwrap();
        assert_eq!(radiative_coefficient(0.0, &sky).unwrap().values[0], 0.0);
        let h1 = radiative_coefficient(1.0, &sky).unwrap().values[0];
        assert!((h1 - 5.148).abs() < 1e-3, "{h1}");
        let h_half = radiative_coefficient(0.5, &sky).unwrap().values[0];
        assert!((h_half - 2.574).abs() < 1e-3);
        assert!(radiative_coefficient(1.5, &sky).is_err());
    }

    #[test]
    fn coefficient_scaling_laws() {
        let m = ConvectiveModel::default();
        let v = Series::new(0.0, 1.0, vec![1.0, 2.0, 3.0]).unwrap();
        let h = convective_coefficient(&m, &v).unwrap();
        // affine: second differences vanish
        assert!((h.values[2] - 2.0 * h.values[1] + h.values[0]).abs() < 1e-12);
        let sky = Series::new(0.0, 1.0, vec![250.0, 500.0]).unwrap();
        let r = radiative_coefficient(0.8, &sky).unwrap();
        assert!((r.values[1] / r.values[0] - 8.0).abs() < 1e-12);
        let r2 = radiative_coefficient(0.4, &sky).unwrap();
        assert!((r.values[0] / r2.values[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn setpoint_examples() {
        let s = Setpoint::default();
        assert_eq!(s.celsius(10.0), 19.0);
        assert_eq!(s.celsius(30.0), 24.0);
        assert!((s.celsius(22.0) - 21.5).abs() < 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=400 {
            let t = 10.0 + k as f64 * 0.05;
            let v = s.celsius(t);
            assert!(v >= prev);
            prev = v;
        }
        assert!((s.celsius(17.0 + 1e-9) - 19.0).abs() < 1e-8);
        assert!((s.celsius(27.0 - 1e-9) - 24.0).abs() < 1e-8);
    }

    #[test]
    fn weather_parsing() {
        let text = "hour,T_out_C,v_wind_ms,q_sw_Wm2,T_sky_C\n0,5.0,1.0,0,-5\n1,6.0,2.0,10,-4\n2,7.0,0.5,20,-3\n";
        let w = read_weather(text.as_bytes(), Path::new("mem.csv")).unwrap();
        assert_eq!(w.len(), 3);
        assert!((w.t_out.values[0] - 278.15).abs() < 1e-12);
        assert_eq!(w.t_out.step, 3600.0);

        let gap = "hour,T_out_C,v_wind_ms,q_sw_Wm2,T_sky_C\n0,5.0,1.0,0,-5\n2,6.0,2.0,10,-4\n";
        match read_weather(gap.as_bytes(), Path::new("gap.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = "hour,T_out_C,v_wind_ms,q_sw_Wm2,T_sky_C\n0,5.0,1.0,0,-5\n1,abc,2.0,10,-4\n";
        match read_weather(bad.as_bytes(), Path::new("bad.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let header = "hour,T_out,v,q,T_sky\n0,5.0,1.0,0,-5\n";
        assert!(read_weather(header.as_bytes(), Path::new("h.csv")).is_err());
    }

    #[test]
    fn weather_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let w = synthetic_weather(48);
        write_weather(&path, &w).unwrap();
        let back = load_weather(&path).unwrap();
        assert_eq!(back.len(), 49);
        for k in 0..49 {
            assert!((back.t_out.values[k] - w.t_out.values[k]).abs() < 1e-4);
            assert!((back.q_sw.values[k] - w.q_sw.values[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn multi_year_length() {
        let w = synthetic_weather(30 * 8760 - 1);
        assert_eq!(w.len(), 262_800);
    }

    #[test]
    fn halton_first_point_and_bounds() {
        let unit = ParameterBox::new(vec![("a", 0.0, 1.0), ("b", 0.0, 1.0)]).unwrap();
        let p = sample_halton(&unit, 1).unwrap();
        assert_eq!(p[0], vec![0.5, 1.0 / 3.0]);

        let domain = ParameterBox::new(vec![("k2", 0.04, 0.10), ("c2", 0.21e6, 1.02e6), ("d2", 0.05, 0.30), ("eps", 0.60, 0.95)])
            .unwrap();
        let pts = sample_halton(&domain, 500).unwrap();
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|p| domain.contains(p)));
        assert_eq!(pts, sample_halton(&domain, 500).unwrap());

        let wide = ParameterBox::new((0..6).map(|i| (["a", "b", "c", "d", "e", "f"][i], 0.0, 1.0)).collect()).unwrap();
        let p = sample_halton(&wide, 1).unwrap();
        assert!((p[0][4] - 1.0 / 11.0).abs() < 1e-15 && (p[0][5] - 1.0 / 13.0).abs() < 1e-15);
        assert!(sample_halton(&unit, 0).is_err());
    }

    fn dirichlet_problem(kappa: Vec<f64>, left: f64, right: f64) -> DimensionlessProblem {
        let n = kappa.len() + 1;
        DimensionlessProblem {
            fourier: vec![1.0; n],
            kappa,
            thickness: vec![0.1; n],
            conductivity: vec![1.0; n],
            left: SurfaceCondition::Dirichlet(Series::constant(left, 0.0, 1.0, 2)),
            right: SurfaceCondition::Dirichlet(Series::constant(right, 0.0, 1.0, 2)),
            tau_final: 1.0,
            refs: References::new(0.0, 1.0, 1.0).unwrap(),
            initial: InitialProfile::constant(n, 0.0),
        }
    }

    #[test]
    fn steady_state_examples() {
        let p = dirichlet_problem(vec![], 0.3, 0.3);
        let u = steady_state_profile(&p, 0.0).unwrap();
        assert!(u.layers[0].iter().all(|&v| (v - 0.3).abs() < 1e-14));

        let p = dirichlet_problem(vec![], 0.0, 1.0);
        let u = steady_state_profile(&p, 0.0).unwrap();
        for k in 0..=10 {
            let chi = k as f64 / 10.0;
            assert!((u.eval(0, chi) - chi).abs() < 1e-14);
        }

        // Two layers: brute-force 2x2 system for (interface value, slope of layer 2).
        // u1 = s1 chi, u2 = g + s2 chi, g = s1, s1 = kappa s2, g + s2 = 1.
        let kappa = 0.37;
        let p = dirichlet_problem(vec![kappa], 0.0, 1.0);
        let (a, s) = steady_state_coefficients(&p, 0.0).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -kappa, 1.0, 1.0]);
        let x = m.lu().solve(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!((a[1] - x[0]).abs() < 1e-14 && (s[1] - x[1]).abs() < 1e-14);
        assert!((s[0] - kappa * s[1]).abs() < 1e-14);
    }

    #[test]
    fn steady_state_robin_flux_balance() {
        let n = 3;
        let robin = |b: f64, u: f64| SurfaceCondition::Robin(RobinData::constant(b, u, 0.0, 1.0, 2));
        let p = DimensionlessProblem {
            fourier: vec![1.0; n],
            kappa: vec![0.2, 4.0],
            thickness: vec![0.1; n],
            conductivity: vec![1.0; n],
            left: robin(2.0, 0.1),
            right: robin(0.7, 0.9),
            tau_final: 1.0,
            refs: References::new(0.0, 1.0, 1.0).unwrap(),
            initial: InitialProfile::constant(n, 0.0),
        };
        let (a, s) = steady_state_coefficients(&p, 0.0).unwrap();
        assert!((-s[0] + 2.0 * a[0] - 0.2).abs() < 1e-12);
        for i in 0..2 {
            assert!((a[i] + s[i] - a[i + 1]).abs() < 1e-10);
            assert!((s[i] - p.kappa[i] * s[i + 1]).abs() < 1e-10);
        }
        assert!((s[2] + 0.7 * (a[2] + s[2]) - 0.7 * 0.9).abs() < 1e-12);

        let mut q = p.clone();
        q.left = robin(0.0, 0.1);
        q.right = robin(0.0, 0.9);
        assert!(matches!(steady_state_profile(&q, 0.0), Err(Error::Singular(_))));
    }
}
