//! Wall geometry, boundary data and the dimensionless problem solved by every
//! model in this crate.
//!
//! Each layer is mapped to its own unit interval `chi in [0, 1]`; time is
//! scaled by a reference `t0`, temperatures by a reference interval
//! `[t_min, t_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;

/// Stefan–Boltzmann constant [W m-2 K-4].
pub const STEFAN_BOLTZMANN: f64 = 5.67e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// [m]
    pub thickness: f64,
    /// [W m-1 K-1]
    pub conductivity: f64,
    /// Volumetric heat capacity [J m-3 K-1]
    pub heat_capacity: f64,
}

impl Layer {
    pub fn new(thickness: f64, conductivity: f64, heat_capacity: f64) -> Result<Self> {
        let layer = Self { thickness, conductivity, heat_capacity };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("thickness", self.thickness),
            ("conductivity", self.conductivity),
            ("heat capacity", self.heat_capacity),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("layer {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn diffusivity(&self) -> f64 {
        self.conductivity / self.heat_capacity
    }
}

/// Outside convective coefficient `h = h0 + h1 * v / v0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvectiveModel {
    pub h0: f64,
    pub h1: f64,
    pub v0: f64,
}

impl ConvectiveModel {
    pub fn constant(h: f64) -> Self {
        Self { h0: h, h1: 0.0, v0: 1.0 }
    }
}

impl Default for ConvectiveModel {
    fn default() -> Self {
        Self { h0: 5.82, h1: 1.39, v0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    /// Outside (left) to inside (right).
    pub layers: Vec<Layer>,
    /// Long-wave emissivity of the outside surface.
    pub emissivity: f64,
    /// Inside surface transfer coefficient [W m-2 K-1].
    pub h_inside: f64,
    pub convective: ConvectiveModel,
}

impl WallSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("wall needs at least one layer"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        if !(0.0..=1.0).contains(&self.emissivity) {
            return Err(Error::invalid(format!("emissivity {} outside [0, 1]", self.emissivity)));
        }
        if !(self.h_inside > 0.0) {
            return Err(Error::invalid("inside transfer coefficient must be positive"));
        }
        let c = &self.convective;
        if c.h0 < 0.0 || c.h1 < 0.0 || !(c.v0 > 0.0) {
            return Err(Error::invalid("invalid convective model coefficients"));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Positions `l_1 = 0 < l_2 < ... < l_{N+1} = total` of layer boundaries.
    pub fn interfaces(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0.0;
        x.push(acc);
        for layer in &self.layers {
            acc += layer.thickness;
            x.push(acc);
        }
        x
    }
}

/// Hourly (or otherwise uniformly sampled) boundary data in SI units and
/// kelvin. Times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySeries {
    pub t_out: Series,
    pub t_in: Series,
    pub v_wind: Series,
    pub q_sw: Series,
    pub t_sky: Series,
}

impl BoundarySeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.t_out.len();
        let all = [&self.t_out, &self.t_in, &self.v_wind, &self.q_sw, &self.t_sky];
        if all.iter().any(|s| s.len() != n) {
            return Err(Error::invalid("boundary series lengths differ"));
        }
        if all.iter().any(|s| s.step != self.t_out.step || s.start != self.t_out.start) {
            return Err(Error::invalid("boundary series use different time grids"));
        }
        for (name, s) in [("T_out", &self.t_out), ("T_in", &self.t_in), ("T_sky", &self.t_sky)] {
            if s.min() <= 0.0 {
                return Err(Error::invalid(format!("{name} must be a positive absolute temperature")));
            }
        }
        if self.v_wind.min() < 0.0 {
            return Err(Error::invalid("negative wind speed"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }

    /// Duration covered by the samples [s].
    pub fn duration(&self) -> f64 {
        self.t_out.end() - self.t_out.start
    }

    pub fn step(&self) -> f64 {
        self.t_out.step
    }
}

/// Temperature and time references of the scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    /// [K]
    pub t_min: f64,
    /// [K]
    pub t_max: f64,
    /// [s]
    pub t0: f64,
}

impl References {
    pub const DEFAULT_T0: f64 = 3600.0;
    pub const MARGIN: f64 = 5.0;

    pub fn new(t_min: f64, t_max: f64, t0: f64) -> Result<Self> {
        let r = Self { t_min, t_max, t0 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > self.t_min) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(Error::invalid(format!(
                "degenerate reference interval [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if !(self.t0 > 0.0) {
            return Err(Error::invalid("reference time must be positive"));
        }
        Ok(())
    }

    /// Floor/ceil of the extreme boundary temperatures (and any `extra`
    /// temperatures such as the initial state) widened by [`Self::MARGIN`].
    pub fn from_boundary(bc: &BoundarySeries, extra: &[f64], t0: f64) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in [&bc.t_out, &bc.t_in, &bc.t_sky] {
            lo = lo.min(s.min());
            hi = hi.max(s.max());
        }
        for &t in extra {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        Self::new(lo.floor() - Self::MARGIN, hi.ceil() + Self::MARGIN, t0)
    }

    pub fn delta(&self) -> f64 {
        self.t_max - self.t_min
    }

    #[inline]
    pub fn scale(&self, temperature: f64) -> f64 {
        (temperature - self.t_min) / (self.t_max - self.t_min)
    }

    #[inline]
    pub fn unscale(&self, u: f64) -> f64 {
        self.t_min + u * (self.t_max - self.t_min)
    }
}

pub fn fourier_number(layer: &Layer, t0: f64) -> Result<f64> {
    layer.validate()?;
    if !(t0 > 0.0) {
        return Err(Error::invalid("reference time must be positive"));
    }
    Ok(layer.conductivity * t0 / (layer.heat_capacity * layer.thickness * layer.thickness))
}

/// Flux-continuity ratios `kappa_{i+1}` with
/// `du_i/dchi (1) = kappa_{i+1} du_{i+1}/dchi (0)`.
pub fn interface_ratios(layers: &[Layer]) -> Vec<f64> {
    layers
        .windows(2)
        .map(|w| (w[1].conductivity * w[0].thickness) / (w[0].conductivity * w[1].thickness))
        .collect()
}

/// Outside convective, outside radiative and inside Biot numbers.
pub fn biot_numbers(wall: &WallSpec, h_out: &Series, h_sky: &Series) -> Result<(Series, Series, f64)> {
    if h_out.is_empty() || h_sky.is_empty() {
        return Err(Error::invalid("empty transfer-coefficient series"));
    }
    if h_out.len() != h_sky.len() {
        return Err(Error::invalid("transfer-coefficient series lengths differ"));
    }
    let first = wall.layers.first().ok_or_else(|| Error::invalid("wall has no layers"))?;
    let last = wall.layers.last().unwrap();
    let scale = first.thickness / first.conductivity;
    let bi_out = h_out.map(|h| h * scale);
    let bi_sky = h_sky.map(|h| h * scale);
    let bi_in = wall.h_inside * last.thickness / last.conductivity;
    Ok((bi_out, bi_sky, bi_in))
}

/// Robin data `-+du/dchi + (bi + bi_sky) u = bi u_air + bi_sky u_sky + rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinData {
    pub biot: Series,
    pub biot_sky: Series,
    pub u_air: Series,
    pub u_sky: Series,
    pub rho: Series,
    coefficient: Series,
    source: Series,
}

impl RobinData {
    pub fn new(biot: Series, biot_sky: Series, u_air: Series, u_sky: Series, rho: Series) -> Result<Self> {
        let n = biot.len();
        if [&biot_sky, &u_air, &u_sky, &rho].iter().any(|s| s.len() != n || s.step != biot.step) {
            return Err(Error::invalid("Robin data series are not aligned"));
        }
        let coefficient = biot.zip_map(&biot_sky, |a, b| a + b);
        let values = (0..n)
            .map(|k| biot.values[k] * u_air.values[k] + biot_sky.values[k] * u_sky.values[k] + rho.values[k])
            .collect();
        let source = Series { start: biot.start, step: biot.step, values };
        Ok(Self { biot, biot_sky, u_air, u_sky, rho, coefficient, source })
    }

    /// Constant Biot number and ambient value, no radiation.
    pub fn constant(biot: f64, u_air: f64, start: f64, step: f64, len: usize) -> Self {
        let zero = Series::constant(0.0, start, step, len);
        Self::new(
            Series::constant(biot, start, step, len),
            zero.clone(),
            Series::constant(u_air, start, step, len),
            zero.clone(),
            zero,
        )
        .expect("aligned by construction")
    }

    pub fn coefficient(&self) -> &Series {
        &self.coefficient
    }

    pub fn source(&self) -> &Series {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurfaceCondition {
    Robin(RobinData),
    /// Prescribed dimensionless surface value.
    Dirichlet(Series),
}

impl SurfaceCondition {
    pub fn is_time_invariant(&self) -> bool {
        match self {
            SurfaceCondition::Robin(r) => r.coefficient.is_constant() && r.source.is_constant(),
            SurfaceCondition::Dirichlet(s) => s.is_constant(),
        }
    }
}

/// Initial dimensionless profile, sampled per layer on a uniform grid of its
/// unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialProfile {
    pub layers: Vec<Vec<f64>>,
}

impl InitialProfile {
    pub fn constant(n_layers: usize, u: f64) -> Self {
        Self { layers: vec![vec![u, u]; n_layers] }
    }

    pub fn from_fn(n_layers: usize, samples: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let samples = samples.max(2);
        let h = 1.0 / (samples - 1) as f64;
        Self {
            layers: (0..n_layers).map(|i| (0..samples).map(|j| f(i, j as f64 * h)).collect()).collect(),
        }
    }

    pub fn eval(&self, layer: usize, chi: f64) -> f64 {
        let v = &self.layers[layer];
        let n = v.len();
        let s = chi.clamp(0.0, 1.0) * (n - 1) as f64;
        let k = (s.floor() as usize).min(n - 2);
        let w = s - k as f64;
        v[k] * (1.0 - w) + v[k + 1] * w
    }

    /// Cubic through the four samples around `chi` (linear for fewer than
    /// four samples). Smoother than [`Self::eval`] for use as a source term.
    pub fn eval_cubic(&self, layer: usize, chi: f64) -> f64 {
        let v = &self.layers[layer];
        let n = v.len();
        if n < 4 {
            return self.eval(layer, chi);
        }
        let s = chi.clamp(0.0, 1.0) * (n - 1) as f64;
        let j = (s.floor() as usize).clamp(1, n - 3) - 1;
        let mut out = 0.0;
        for a in j..j + 4 {
            let mut l = 1.0;
            for b in j..j + 4 {
                if a != b {
                    l *= (s - b as f64) / (a as f64 - b as f64);
                }
            }
            out += l * v[a];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessProblem {
    pub fourier: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Physical thicknesses [m], for flux conversion and plotting.
    pub thickness: Vec<f64>,
    /// [W m-1 K-1]
    pub conductivity: Vec<f64>,
    pub left: SurfaceCondition,
    pub right: SurfaceCondition,
    pub tau_final: f64,
    pub refs: References,
    pub initial: InitialProfile,
}

impl DimensionlessProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.fourier.len();
        if n == 0 {
            return Err(Error::invalid("problem has no layers"));
        }
        if self.kappa.len() + 1 != n || self.thickness.len() != n || self.conductivity.len() != n {
            return Err(Error::invalid("per-layer data lengths disagree"));
        }
        if self.fourier.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::invalid("Fourier numbers must be positive"));
        }
        if self.kappa.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::invalid("interface ratios must be positive"));
        }
        if !(self.tau_final > 0.0) {
            return Err(Error::invalid("final time must be positive"));
        }
        if self.initial.layers.len() != n {
            return Err(Error::invalid("initial profile layer count mismatch"));
        }
        self.refs.validate()
    }

    pub fn n_layers(&self) -> usize {
        self.fourier.len()
    }

    pub fn with_initial(mut self, initial: InitialProfile) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_tau_final(mut self, tau_final: f64) -> Self {
        self.tau_final = tau_final;
        self
    }

    /// Physical position [m] of `chi` in `layer`.
    pub fn physical_x(&self, layer: usize, chi: f64) -> f64 {
        self.thickness[..layer].iter().sum::<f64>() + chi * self.thickness[layer]
    }

    pub fn is_time_invariant(&self) -> bool {
        self.left.is_time_invariant() && self.right.is_time_invariant()
    }
}

/// Builds the dimensionless problem from physical data. The initial profile
/// defaults to the uniform indoor temperature at `t = 0`; replace it with
/// [`DimensionlessProblem::with_initial`].
pub fn to_dimensionless(wall: &WallSpec, bc: &BoundarySeries, refs: &References) -> Result<DimensionlessProblem> {
    wall.validate()?;
    bc.validate()?;
    refs.validate()?;
    let t0 = refs.t0;
    let start = bc.t_out.start / t0;
    let step = bc.step() / t0;
    let rebase = |s: &Series| Series { start, step, values: s.values.clone() };

    let h_out = crate::climate::convective_coefficient(&wall.convective, &bc.v_wind)?;
    let h_sky = crate::climate::radiative_coefficient(wall.emissivity, &bc.t_sky)?;
    let (bi_out, bi_sky, bi_in) = biot_numbers(wall, &h_out, &h_sky)?;

    let first = wall.layers[0];
    let dt = refs.delta();
    let left = RobinData::new(
        rebase(&bi_out),
        rebase(&bi_sky),
        rebase(&bc.t_out.map(|t| refs.scale(t))),
        rebase(&bc.t_sky.map(|t| refs.scale(t))),
        rebase(&bc.q_sw.map(|q| first.thickness / (first.conductivity * dt) * q)),
    )?;
    let n = bc.len();
    let right = RobinData::new(
        Series::constant(bi_in, start, step, n),
        Series::constant(0.0, start, step, n),
        rebase(&bc.t_in.map(|t| refs.scale(t))),
        Series::constant(0.0, start, step, n),
        Series::constant(0.0, start, step, n),
    )?;

    let fourier = wall.layers.iter().map(|l| fourier_number(l, t0)).collect::<Result<Vec<_>>>()?;
    let u_init = refs.scale(bc.t_in.values[0]);
    Ok(DimensionlessProblem {
        fourier,
        kappa: interface_ratios(&wall.layers),
        thickness: wall.layers.iter().map(|l| l.thickness).collect(),
        conductivity: wall.layers.iter().map(|l| l.conductivity).collect(),
        left: SurfaceCondition::Robin(left),
        right: SurfaceCondition::Robin(right),
        tau_final: bc.duration() / t0,
        refs: *refs,
        initial: InitialProfile::constant(wall.n_layers(), u_init),
    })
}

/// Inverse temperature scaling applied to a whole field.
pub fn from_dimensionless(u: &[f64], refs: &References) -> Vec<f64> {
    u.iter().map(|&v| refs.unscale(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn fourier_examples() {
        let l = Layer::new(0.10, 0.5, 1.5e5).unwrap();
        assert!(close(fourier_number(&l, 3600.0).unwrap(), 1.2, 1e-12));
        let unit = Layer::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(fourier_number(&unit, 1.0).unwrap(), 1.0);
        let l = Layer::new(0.18, 1.0, 1.3e6).unwrap();
        assert!((fourier_number(&l, 3600.0).unwrap() - 8.547e-2).abs() < 1e-5);
        assert!(fourier_number(&l, 0.0).is_err());
        assert!(Layer::new(-0.1, 1.0, 1.0).is_err());
    }

    fn mono_wall() -> WallSpec {
        WallSpec {
            layers: vec![Layer::new(0.10, 0.5, 1.5e5).unwrap()],
            emissivity: 0.0,
            h_inside: 7.5,
            convective: ConvectiveModel::constant(6.0),
        }
    }

    #[test]
    fn biot_examples() {
        let wall = mono_wall();
        let h = Series::constant(6.0, 0.0, 1.0, 3);
        let zero = Series::constant(0.0, 0.0, 1.0, 3);
        let (bl, bs, br) = biot_numbers(&wall, &h, &zero).unwrap();
        assert!(close(bl.values[0], 1.2, 1e-12));
        assert_eq!(bs.values[0], 0.0);
        assert!(close(br, 1.5, 1e-12));
        let empty = Series { start: 0.0, step: 1.0, values: vec![] };
        assert!(biot_numbers(&wall, &empty, &zero).is_err());
    }

    #[test]
    fn kappa_follows_flux_continuity() {
        let layers = [Layer::new(0.18, 1.0, 1.3e6).unwrap(), Layer::new(0.42, 0.5, 2.45e5).unwrap()];
        let k = interface_ratios(&layers);
        assert_eq!(k.len(), 1);
        assert!(close(k[0], 0.5 * 0.18 / 0.42, 1e-14));
        assert!(interface_ratios(&layers[..1]).is_empty());
    }

    #[test]
    fn scaling_examples() {
        let r = References::new(268.15, 308.15, 3600.0).unwrap();
        assert_eq!(r.scale(268.15), 0.0);
        assert_eq!(r.scale(308.15), 1.0);
        assert_eq!(r.unscale(0.0), 268.15);
        assert_eq!(r.unscale(1.0), 308.15);
        assert!(close(r.unscale(0.5), 288.15, 1e-15));
        assert!(References::new(300.0, 300.0, 3600.0).is_err());
    }

    #[test]
    fn radiation_source_scaling() {
        // q = 150 W/m2, l2 = 0.12 m, k1 = 1.0, T range 40 K.
        let wall = WallSpec {
            layers: vec![Layer::new(0.12, 1.0, 1.85e6).unwrap(), Layer::new(0.2, 0.5, 1e6).unwrap()],
            emissivity: 0.0,
            h_inside: 7.0,
            convective: ConvectiveModel::constant(10.0),
        };
        let n = 2;
        let bc = BoundarySeries {
            t_out: Series::constant(293.15, 0.0, 3600.0, n),
            t_in: Series::constant(293.15, 0.0, 3600.0, n),
            v_wind: Series::constant(0.0, 0.0, 3600.0, n),
            q_sw: Series::constant(150.0, 0.0, 3600.0, n),
            t_sky: Series::constant(283.15, 0.0, 3600.0, n),
        };
        let refs = References::new(273.15, 313.15, 3600.0).unwrap();
        let p = to_dimensionless(&wall, &bc, &refs).unwrap();
        match &p.left {
            SurfaceCondition::Robin(r) => assert!(close(r.rho.values[0], 0.45, 1e-12)),
            _ => unreachable!(),
        }
        assert_eq!(p.tau_final, 1.0);
        assert_eq!(p.kappa.len(), 1);
    }

    #[test]
    fn auto_references_cover_boundary_data() {
        let n = 3;
        let bc = BoundarySeries {
            t_out: Series::new(0.0, 3600.0, vec![270.2, 280.0, 290.7]).unwrap(),
            t_in: Series::constant(293.15, 0.0, 3600.0, n),
            v_wind: Series::constant(0.0, 0.0, 3600.0, n),
            q_sw: Series::constant(0.0, 0.0, 3600.0, n),
            t_sky: Series::constant(265.5, 0.0, 3600.0, n),
        };
        let r = References::from_boundary(&bc, &[], 3600.0).unwrap();
        assert_eq!(r.t_min, 265.0 - 5.0);
        assert_eq!(r.t_max, 294.0 + 5.0);
    }

    proptest::proptest! {
        #[test]
        fn temperature_round_trip(t in 150.0f64..450.0, lo in 200.0f64..290.0, span in 1.0f64..100.0) {
            let r = References::new(lo, lo + span, 3600.0).unwrap();
            let back = from_dimensionless(&[r.scale(t)], &r)[0];
            proptest::prop_assert!((back - t).abs() <= 1e-12 * t.abs());
        }
    }
}
