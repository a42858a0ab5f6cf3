//! Space–time solution fields shared by every model.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Com,
    PodT,
    PodX,
    Analytical,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Com => "COM",
            ModelKind::PodT => "PODt",
            ModelKind::PodX => "PODx",
            ModelKind::Analytical => "analytical",
        })
    }
}

/// One layer of a field: rows are nodes of the layer's uniform `chi` grid,
/// columns are output times.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerField {
    pub chi: Vec<f64>,
    pub u: DMatrix<f64>,
    pub dudchi: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub model: ModelKind,
    pub times: Vec<f64>,
    pub layers: Vec<LayerField>,
    pub dof: usize,
    pub cpu_time: f64,
}

impl FieldSolution {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let shape = (l.chi.len(), self.times.len());
            if l.u.shape() != shape || l.dudchi.shape() != shape {
                return Err(Error::invalid(format!("layer {i}: field shape does not match its grids")));
            }
        }
        Ok(())
    }

    /// Values at the right surface of the last layer, one per time.
    pub fn right_surface(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.layers.last().expect("at least one layer");
        let j = l.chi.len() - 1;
        (l.u.row(j).iter().copied().collect(), l.dudchi.row(j).iter().copied().collect())
    }

    /// Keeps every `stride`-th node of each layer (coarsening a refined grid).
    pub fn coarsen(&self, stride: &[usize]) -> Result<FieldSolution> {
        if stride.len() != self.layers.len() {
            return Err(Error::invalid("one stride per layer required"));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, &s) in self.layers.iter().zip(stride) {
            let n = l.chi.len();
            if s == 0 || (n - 1) % s != 0 {
                return Err(Error::invalid(format!("stride {s} does not divide {} intervals", n - 1)));
            }
            let idx: Vec<usize> = (0..n).step_by(s).collect();
            layers.push(LayerField {
                chi: idx.iter().map(|&j| l.chi[j]).collect(),
                u: l.u.select_rows(idx.iter()),
                dudchi: l.dudchi.select_rows(idx.iter()),
            });
        }
        Ok(FieldSolution { layers, ..self.clone() })
    }

    /// Writes `tau,x_m,u,dudchi`; `x_m` uses the physical layer thicknesses.
    pub fn write_csv(&self, path: impl AsRef<Path>, thickness: &[f64]) -> Result<()> {
        if thickness.len() != self.layers.len() {
            return Err(Error::invalid("one thickness per layer required"));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau", "x_m", "u", "dudchi"])?;
        for (k, tau) in self.times.iter().enumerate() {
            let mut x0 = 0.0;
            for (l, d) in self.layers.iter().zip(thickness) {
                for (j, chi) in l.chi.iter().enumerate() {
                    w.write_record(&[
                        fmt_g17(*tau),
                        fmt_g17(x0 + chi * d),
                        fmt_g17(l.u[(j, k)]),
                        fmt_g17(l.dudchi[(j, k)]),
                    ])?;
                }
                x0 += d;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows of a field CSV.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct FieldRow {
    pub tau: f64,
    pub x_m: f64,
    pub u: f64,
    pub dudchi: f64,
}

pub fn read_field_csv(path: impl AsRef<Path>) -> Result<Vec<FieldRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Shortest text that round-trips the value exactly (what `%.17g` guarantees).
pub fn fmt_g17(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FieldSolution {
        let chi = vec![0.0, 0.5, 1.0];
        let u = DMatrix::from_fn(3, 2, |j, k| j as f64 + 0.1 * k as f64);
        let d = DMatrix::from_fn(3, 2, |j, k| -(j as f64) * 1.0 / 3.0 + k as f64);
        FieldSolution {
            model: ModelKind::Com,
            times: vec![0.0, 1.0],
            layers: vec![LayerField { chi: chi.clone(), u: u.clone(), dudchi: d.clone() }, LayerField { chi, u, dudchi: d }],
            dof: 10,
            cpu_time: 0.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let f = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p, &[0.1, 0.2]).unwrap();
        let rows = read_field_csv(&p).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[3].x_m, 0.1);
        assert_eq!(rows[4].x_m, 0.1 + 0.5 * 0.2);
        assert_eq!(rows[7].dudchi, f.layers[0].dudchi[(1, 1)]);
    }

    #[test]
    fn coarsen_keeps_ends() {
        let f = sample();
        let c = f.coarsen(&[2, 1]).unwrap();
        assert_eq!(c.layers[0].chi, vec![0.0, 1.0]);
        assert_eq!(c.layers[1].chi.len(), 3);
        assert!(f.coarsen(&[3, 1]).is_err());
    }

    #[test]
    fn g17_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_g17(v).parse::<f64>().unwrap(), v);
        }
    }
}
