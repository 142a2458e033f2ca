//! TDOA measurement models.
//!
//! The linear model uses half the difference of squared ranges,
//! `½(‖p − p_i‖² − ‖p − p_j‖²) = (p_j − p_i)·p − ½(‖p_j‖² − ‖p_i‖²)`, so each
//! row of `H_i` is `(p_j − p_i, 0, 0, 0)` regardless of where the target is.
//! The nonlinear model is the plain range difference, whose linearization
//! depends on an evaluation point.

use nalgebra::{DMatrix, DVector, RowVector6, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::network::{SensorNetwork, DEFAULT_COINCIDENCE_EPS};

/// Distance below which the range gradient is treated as undefined.
pub const SINGULAR_EPS: f64 = 1e-9;

pub fn linear_row(p_i: &Vector3<f64>, p_j: &Vector3<f64>) -> Result<RowVector6<f64>> {
    let d = p_j - p_i;
    if d.norm() <= DEFAULT_COINCIDENCE_EPS {
        return Err(Error::DegenerateGeometry(format!(
            "sensors at {:?} and {:?} coincide",
            p_i.as_slice(),
            p_j.as_slice()
        )));
    }
    Ok(RowVector6::new(d.x, d.y, d.z, 0.0, 0.0, 0.0))
}

/// Noise-free linear TDOA value `½(‖p − p_i‖² − ‖p − p_j‖²)`.
pub fn half_squared_range_difference(
    p: &Vector3<f64>,
    p_i: &Vector3<f64>,
    p_j: &Vector3<f64>,
) -> f64 {
    0.5 * ((p - p_i).norm_squared() - (p - p_j).norm_squared())
}

/// Noise-free range difference `‖p − p_i‖ − ‖p − p_j‖`.
pub fn range_difference(p: &Vector3<f64>, p_i: &Vector3<f64>, p_j: &Vector3<f64>) -> f64 {
    (p - p_i).norm() - (p - p_j).norm()
}

/// Gradient of the range difference at `p_eval`, padded with zero velocity columns.
pub fn nonlinear_row(
    p_eval: &Vector3<f64>,
    p_i: &Vector3<f64>,
    p_j: &Vector3<f64>,
) -> Result<RowVector6<f64>> {
    let di = p_eval - p_i;
    let dj = p_eval - p_j;
    let (ni, nj) = (di.norm(), dj.norm());
    if ni <= SINGULAR_EPS || nj <= SINGULAR_EPS {
        return Err(Error::SingularGeometry(format!(
            "evaluation point {:?} sits on a sensor",
            p_eval.as_slice()
        )));
    }
    let g = di / ni - dj / nj;
    Ok(RowVector6::new(g.x, g.y, g.z, 0.0, 0.0, 0.0))
}

fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "measurement noise std must be >= 0, got {sigma}"
        )))
    }
}

/// Per-sensor `H_i` and known bias `b_i`, fixed once the network is placed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTdoaModel {
    positions: Vec<Vector3<f64>>,
    neighbors: Vec<Vec<usize>>,
    h: Vec<DMatrix<f64>>,
    bias: Vec<DVector<f64>>,
    sigma: f64,
}

impl LinearTdoaModel {
    /// `sigma` is the per-row noise standard deviation (`R = σ² I`).
    pub fn new(net: &SensorNetwork, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let positions = net.require_positions()?.to_vec();
        let neighbors: Vec<Vec<usize>> =
            (0..net.len()).map(|i| net.neighbors(i).to_vec()).collect();
        let mut h = Vec::with_capacity(net.len());
        let mut bias = Vec::with_capacity(net.len());
        for (i, nb) in neighbors.iter().enumerate() {
            let p_i = &positions[i];
            let mut hi = DMatrix::zeros(nb.len(), 6);
            let mut bi = DVector::zeros(nb.len());
            for (row, &j) in nb.iter().enumerate() {
                let p_j = &positions[j];
                hi.row_mut(row).copy_from(&linear_row(p_i, p_j)?);
                bi[row] = -0.5 * (p_j.norm_squared() - p_i.norm_squared());
            }
            h.push(hi);
            bias.push(bi);
        }
        Ok(LinearTdoaModel {
            positions,
            neighbors,
            h,
            bias,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn h(&self, i: usize) -> &DMatrix<f64> {
        &self.h[i]
    }

    pub fn bias(&self, i: usize) -> &DVector<f64> {
        &self.bias[i]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rows(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Raw measurement at sensor `i`: `½(‖p − p_i‖² − ‖p − p_j‖²) + ν` per neighbor.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        target_pos: &Vector3<f64>,
        i: usize,
        rng: &mut R,
    ) -> DVector<f64> {
        let p_i = &self.positions[i];
        DVector::from_iterator(
            self.neighbors[i].len(),
            self.neighbors[i].iter().map(|&j| {
                half_squared_range_difference(target_pos, p_i, &self.positions[j])
                    + gaussian(self.sigma, rng)
            }),
        )
    }

    pub fn debias(&self, i: usize, y: &DVector<f64>) -> DVector<f64> {
        y - &self.bias[i]
    }

    /// What the filters consume: `y_i − b_i = H_i x + ν`.
    pub fn measure_debiased<R: Rng + ?Sized>(
        &self,
        target_pos: &Vector3<f64>,
        i: usize,
        rng: &mut R,
    ) -> DVector<f64> {
        let y = self.measure(target_pos, i, rng);
        self.debias(i, &y)
    }

    /// `D_H = diag[H_i]`.
    pub fn stacked_block_diag(&self) -> DMatrix<f64> {
        crate::linalg::block_diag(&self.h)
    }

    /// `D_Hᵀ D_H = diag[H_iᵀ H_i]`, square `6N`.
    pub fn gramian_block_diag(&self) -> DMatrix<f64> {
        let blocks: Vec<_> = self.h.iter().map(|h| h.transpose() * h).collect();
        crate::linalg::block_diag(&blocks)
    }

    /// All rows stacked sensor by sensor, for centralized filtering.
    pub fn stacked_h(&self) -> DMatrix<f64> {
        let rows: usize = self.h.iter().map(|h| h.nrows()).sum();
        let mut out = DMatrix::zeros(rows, 6);
        let mut r = 0;
        for h in &self.h {
            out.rows_mut(r, h.nrows()).copy_from(h);
            r += h.nrows();
        }
        out
    }
}

/// Range-difference model. Rows depend on where they are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearTdoaModel {
    positions: Vec<Vector3<f64>>,
    neighbors: Vec<Vec<usize>>,
    sigma: f64,
}

impl NonlinearTdoaModel {
    pub fn new(net: &SensorNetwork, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(NonlinearTdoaModel {
            positions: net.require_positions()?.to_vec(),
            neighbors: (0..net.len()).map(|i| net.neighbors(i).to_vec()).collect(),
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn rows(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Noise-free range differences at sensor `i`.
    pub fn predict(&self, p: &Vector3<f64>, i: usize) -> Result<DVector<f64>> {
        let p_i = &self.positions[i];
        let mut out = DVector::zeros(self.neighbors[i].len());
        for (row, &j) in self.neighbors[i].iter().enumerate() {
            let p_j = &self.positions[j];
            if (p - p_i).norm() <= SINGULAR_EPS || (p - p_j).norm() <= SINGULAR_EPS {
                return Err(Error::SingularGeometry(format!(
                    "target {:?} sits on a sensor",
                    p.as_slice()
                )));
            }
            out[row] = range_difference(p, p_i, p_j);
        }
        Ok(out)
    }

    pub fn measure<R: Rng + ?Sized>(
        &self,
        target_pos: &Vector3<f64>,
        i: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let mut y = self.predict(target_pos, i)?;
        for v in y.iter_mut() {
            *v += gaussian(self.sigma, rng);
        }
        Ok(y)
    }

    /// Linearized `H_i` evaluated at `p_eval`.
    pub fn jacobian(&self, p_eval: &Vector3<f64>, i: usize) -> Result<DMatrix<f64>> {
        let p_i = &self.positions[i];
        let mut h = DMatrix::zeros(self.neighbors[i].len(), 6);
        for (row, &j) in self.neighbors[i].iter().enumerate() {
            h.row_mut(row)
                .copy_from(&nonlinear_row(p_eval, p_i, &self.positions[j])?);
        }
        Ok(h)
    }
}
