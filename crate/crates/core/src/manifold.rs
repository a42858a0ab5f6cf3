//! Interpolation of time bases between parameter points on the Grassmann
//! manifold: logarithmic map to the tangent space at a reference basis,
//! multiquadric RBF interpolation of the tangent matrices, exponential map
//! back.
//!
//! Bases are orthonormal under trapezoid weights in time. The maps work on
//! `Q = W^1/2 Psi`, which is orthonormal in the plain Euclidean sense.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::climate::ParameterBox;
use crate::error::{Error, Result};
use crate::pod::{self, LayerTimeBasis, TimeBasis};

/// Smallest singular value of `Q0^T Q` still treated as invertible.
const FAR_LIMIT: f64 = 1e-10;

/// Largest kernel condition number solved without regularization.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisArchive {
    pub domain: ParameterBox,
    pub entries: Vec<TimeBasis>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveMeta {
    domain: ParameterBox,
    entries: usize,
}

impl BasisArchive {
    pub fn new(domain: ParameterBox, entries: Vec<TimeBasis>) -> Result<Self> {
        let a = Self { domain, entries };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let first = self.entries.first().ok_or_else(|| Error::invalid("archive is empty"))?;
        for (j, e) in self.entries.iter().enumerate() {
            if e.parameter.len() != self.domain.dim() {
                return Err(Error::invalid(format!("entry {j}: parameter has the wrong dimension")));
            }
            if e.n_snapshots() != first.n_snapshots() || e.dtau != first.dtau || e.orders() != first.orders() {
                return Err(Error::invalid(format!("entry {j}: snapshot grid or orders differ from entry 0")));
            }
            for prev in &self.entries[..j] {
                if prev.parameter == e.parameter {
                    return Err(Error::invalid(format!("entry {j}: duplicate parameter point")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.entries[0].layers.len()
    }

    pub fn normalized_points(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| self.domain.normalize(&e.parameter)).collect()
    }

    /// Index of the entry closest to `p` in normalized coordinates.
    pub fn nearest(&self, p: &[f64]) -> usize {
        let q = self.domain.normalize(p);
        let pts = self.normalized_points();
        let mut best = 0;
        for j in 1..pts.len() {
            if distance(&pts[j], &q) < distance(&pts[best], &q) {
                best = j;
            }
        }
        best
    }

    /// `archive.json` plus one `entry_<j>` basis directory per point.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = ArchiveMeta { domain: self.domain.clone(), entries: self.entries.len() };
        std::fs::write(dir.join("archive.json"), serde_json::to_string_pretty(&meta)?)?;
        for (j, e) in self.entries.iter().enumerate() {
            pod::save_time_basis(e, dir.join(format!("entry_{j}")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ArchiveMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("archive.json"))?)?;
        let entries =
            (0..meta.entries).map(|j| pod::load_time_basis(dir.join(format!("entry_{j}")))).collect::<Result<Vec<_>>>()?;
        Self::new(meta.domain, entries)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn sqrt_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| v.sqrt()).collect()
}

/// `W^1/2 Psi`.
pub fn to_euclidean(psi: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let s = sqrt_weights(w);
    DMatrix::from_fn(psi.nrows(), psi.ncols(), |k, n| s[k] * psi[(k, n)])
}

/// `W^-1/2 Q`.
pub fn from_euclidean(q: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let s = sqrt_weights(w);
    DMatrix::from_fn(q.nrows(), q.ncols(), |k, n| q[(k, n)] / s[k])
}

/// Thin SVD with singular values in descending order.
fn svd_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    (u, s, v)
}

/// Tangent matrix at `q0` pointing to `span(q)`; both Euclidean-orthonormal.
pub fn log_map(q0: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q0.shape() != q.shape() {
        return Err(Error::invalid("bases must have the same shape"));
    }
    let m = q0.transpose() * q;
    let (_, s, _) = svd_sorted(&m);
    let smin = s.last().copied().unwrap_or(0.0);
    if smin < FAR_LIMIT {
        return Err(Error::SubspacesTooFar(smin));
    }
    let minv = m.try_inverse().ok_or(Error::SubspacesTooFar(smin))?;
    let x = (q - q0 * (q0.transpose() * q)) * minv;
    let (u, s, v) = svd_sorted(&x);
    let atan = DMatrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().map(|v| v.atan())));
    Ok(u * atan * v.transpose())
}

/// Point reached from `span(q0)` along the tangent `gamma`; orthonormal.
pub fn exp_map(q0: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q0.shape() != gamma.shape() {
        return Err(Error::invalid("tangent and reference must have the same shape"));
    }
    let (u, s, v) = svd_sorted(gamma);
    let cos = DMatrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().map(|v| v.cos())));
    let sin = DMatrix::from_diagonal(&DVector::from_iterator(s.len(), s.iter().map(|v| v.sin())));
    let vt = v.transpose();
    let mut q = q0 * &v * cos * &vt + u * sin * vt;
    let ones = vec![1.0; q.nrows()];
    pod::orthonormalize(&mut q, &ones)?;
    Ok(q)
}

/// Principal angles between two Euclidean-orthonormal bases, descending.
/// Computed from sines, which stay accurate for nearly equal subspaces.
pub fn principal_angles(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Vec<f64> {
    let r = q2 - q1 * (q1.transpose() * q2);
    svd_sorted(&r).1.into_iter().map(|s| s.min(1.0).asin()).collect()
}

/// Largest principal angle between two time bases under weights `w`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> f64 {
    principal_angles(&to_euclidean(a, w), &to_euclidean(b, w)).first().copied().unwrap_or(0.0)
}

/// `sqrt(1 + (r / c)^2)`.
pub fn multiquadric(r: f64, c: f64) -> f64 {
    (1.0 + (r / c).powi(2)).sqrt()
}

/// Scalar RBF interpolation sharing one kernel matrix across all values.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    pub centers: Vec<Vec<f64>>,
    pub shape: f64,
    /// `N_b x m`: one weight column per interpolated value.
    pub weights: DMatrix<f64>,
    pub regularized: bool,
}

impl RbfModel {
    /// Fits `values` (`N_b x m`, one row per center). Centers are normalized
    /// parameter points.
    pub fn fit(centers: Vec<Vec<f64>>, values: &DMatrix<f64>) -> Result<Self> {
        let nb = centers.len();
        if nb < 2 || values.nrows() != nb {
            return Err(Error::invalid("RBF fit needs at least two centers and one value row per center"));
        }
        let shape = centers
            .iter()
            .enumerate()
            .map(|(i, a)| {
                centers.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| distance(a, b)).fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / nb as f64;
        if !(shape > 0.0) {
            return Err(Error::invalid("RBF centers must be distinct"));
        }
        let mut k = DMatrix::from_fn(nb, nb, |i, j| multiquadric(distance(&centers[i], &centers[j]), shape));
        let sv = k.singular_values();
        let cond = sv.max() / sv.min();
        let mut regularized = false;
        if !(cond <= MAX_CONDITION) {
            log::warn!("RBF kernel condition {cond:.3e}; adding Tikhonov regularization");
            let lambda = 1e-10 * k.trace() / nb as f64;
            for i in 0..nb {
                k[(i, i)] += lambda;
            }
            regularized = true;
        }
        let lu = k.clone().lu();
        let weights = lu.solve(values).ok_or_else(|| Error::Singular("RBF kernel matrix".into()))?;
        let residual = (&k * &weights - values).amax();
        if !regularized && residual > 1e-8 * (1.0 + values.amax()) {
            return Err(Error::Singular(format!("RBF interpolation residual {residual:.3e}")));
        }
        Ok(Self { centers, shape, weights, regularized })
    }

    pub fn kernel_row(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.centers.len(), self.centers.iter().map(|c| multiquadric(distance(c, q), self.shape)))
    }

    /// Interpolated values at normalized point `q`.
    pub fn eval(&self, q: &[f64]) -> DVector<f64> {
        self.weights.transpose() * self.kernel_row(q)
    }
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Tangent-space RBF models of every layer for one reference entry.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub reference: usize,
    pub layers: Vec<RbfModel>,
}

/// Fits the tangent matrices of all entries around entry `j0`.
pub fn fit_rbf(archive: &BasisArchive, j0: usize) -> Result<ReferenceModel> {
    archive.validate()?;
    if archive.len() < 2 {
        return Err(Error::invalid("interpolation needs at least two archived bases"));
    }
    if j0 >= archive.len() {
        return Err(Error::invalid("reference index out of range"));
    }
    let w = archive.entries[0].weights();
    let centers = archive.normalized_points();
    let mut layers = Vec::with_capacity(archive.n_layers());
    for i in 0..archive.n_layers() {
        let q0 = to_euclidean(&archive.entries[j0].layers[i].psi, &w);
        let (ns, n) = q0.shape();
        let mut values = DMatrix::zeros(archive.len(), ns * n);
        for (j, e) in archive.entries.iter().enumerate() {
            if j == j0 {
                continue;
            }
            let g = log_map(&q0, &to_euclidean(&e.layers[i].psi, &w))?;
            values.row_mut(j).copy_from_slice(&flatten(&g));
        }
        layers.push(RbfModel::fit(centers.clone(), &values)?);
    }
    Ok(ReferenceModel { reference: j0, layers })
}

/// Interpolated basis at parameter point `p` through the tangent space of
/// `model.reference`.
pub fn interpolate_basis(archive: &BasisArchive, model: &ReferenceModel, p: &[f64]) -> Result<TimeBasis> {
    if p.len() != archive.domain.dim() {
        return Err(Error::invalid("query point has the wrong dimension"));
    }
    let q = archive.domain.normalize(p);
    let w = archive.entries[0].weights();
    let reference = &archive.entries[model.reference];
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, rbf) in model.layers.iter().enumerate() {
        let q0 = to_euclidean(&reference.layers[i].psi, &w);
        let g = DMatrix::from_column_slice(q0.nrows(), q0.ncols(), rbf.eval(&q).as_slice());
        let mut psi = from_euclidean(&exp_map(&q0, &g)?, &w);
        pod::orthonormalize(&mut psi, &w)?;
        layers.push(LayerTimeBasis { psi, eigenvalues: Vec::new() });
    }
    Ok(TimeBasis { dtau: reference.dtau, parameter: p.to_vec(), layers })
}

/// Online interpolator: one tangent model per possible reference entry, the
/// nearest entry to each query serving as reference.
#[derive(Debug, Clone)]
pub struct Interpolator {
    pub archive: BasisArchive,
    models: Vec<ReferenceModel>,
}

impl Interpolator {
    pub fn new(archive: BasisArchive) -> Result<Self> {
        let models = (0..archive.len()).map(|j| fit_rbf(&archive, j)).collect::<Result<Vec<_>>>()?;
        Ok(Self { archive, models })
    }

    pub fn interpolate(&self, p: &[f64]) -> Result<TimeBasis> {
        let j0 = self.archive.nearest(p);
        interpolate_basis(&self.archive, &self.models[j0], p)
    }
}

/// Control path: entrywise RBF interpolation of the basis matrices without
/// the manifold maps. The result is not orthonormal, which is the point of
/// the comparison.
pub fn interpolate_naive(archive: &BasisArchive, p: &[f64]) -> Result<TimeBasis> {
    archive.validate()?;
    let centers = archive.normalized_points();
    let q = archive.domain.normalize(p);
    let mut layers = Vec::new();
    for i in 0..archive.n_layers() {
        let (ns, n) = archive.entries[0].layers[i].psi.shape();
        let mut values = DMatrix::zeros(archive.len(), ns * n);
        for (j, e) in archive.entries.iter().enumerate() {
            values.row_mut(j).copy_from_slice(&flatten(&e.layers[i].psi));
        }
        let rbf = RbfModel::fit(centers.clone(), &values)?;
        let psi = DMatrix::from_column_slice(ns, n, rbf.eval(&q).as_slice());
        layers.push(LayerTimeBasis { psi, eigenvalues: Vec::new() });
    }
    Ok(TimeBasis { dtau: archive.entries[0].dtau, parameter: p.to_vec(), layers })
}
