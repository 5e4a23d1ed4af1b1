//! SIMP design chain: `x -> filter -> power penalty -> interpolation ->
//! Heaviside projection -> rho`, and its reverse-mode chain rule.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::fem::GroundMesh;

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

/// Design variables, one per element, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector(pub Vec<f64>);

impl DesignVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some((e, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Parameter(format!(
                "design variable {e} = {v} outside [0, 1]"
            )));
        }
        Ok(Self(x))
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        Self(vec![value.clamp(0.0, 1.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Row-stochastic density filter with linear hat weights.
///
/// Rows keep their raw weights and are divided by the row total on
/// application, so a constant design is reproduced exactly.
#[derive(Debug, Clone)]
pub struct FilterMatrix {
    pub radius: f64,
    rows: Vec<Vec<(usize, f64)>>,
    totals: Vec<f64>,
}

impl FilterMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            radius: 0.0,
            rows: (0..n).map(|e| vec![(e, 1.0)]).collect(),
            totals: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Normalised weights of row `e`.
    pub fn row(&self, e: usize) -> Vec<(usize, f64)> {
        self.rows[e]
            .iter()
            .map(|&(j, w)| (j, w / self.totals[e]))
            .collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.totals)
            .map(|(row, total)| row.iter().map(|&(j, w)| w * x[j]).sum::<f64>() / total)
            .collect()
    }

    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for (e, row) in self.rows.iter().enumerate() {
            let ge = g[e] / self.totals[e];
            for &(j, w) in row {
                out[j] += w * ge;
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut a = nalgebra::DMatrix::zeros(n, n);
        for e in 0..n {
            for (j, w) in self.row(e) {
                a[(e, j)] = w;
            }
        }
        a
    }
}

/// Builds the filter with weights `max(0, radius - |c_e - c_j|)` normalised
/// per row. A zero radius gives the identity.
pub fn build_filter(mesh: &GroundMesh, radius: f64) -> Result<FilterMatrix> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Parameter(format!(
            "filter radius must be finite and non-negative, got {radius}"
        )));
    }
    let n = mesh.n_elements();
    if radius == 0.0 {
        return Ok(FilterMatrix::identity(n));
    }
    let (nx, ny) = (mesh.nx as isize, mesh.ny as isize);
    let reach = radius.ceil() as isize;
    let mut rows = Vec::with_capacity(n);
    let mut totals = Vec::with_capacity(n);
    for i in 0..nx {
        for j in 0..ny {
            let mut row = Vec::new();
            for di in -reach..=reach {
                for dj in -reach..=reach {
                    let (k, l) = (i + di, j + dj);
                    if k < 0 || l < 0 || k >= nx || l >= ny {
                        continue;
                    }
                    let w = radius - ((di * di + dj * dj) as f64).sqrt();
                    if w > 0.0 {
                        row.push((mesh.element_index(k as usize, l as usize), w));
                    }
                }
            }
            row.sort_by_key(|&(j, _)| j);
            totals.push(row.iter().map(|(_, w)| w).sum());
            rows.push(row);
        }
    }
    Ok(FilterMatrix {
        radius,
        rows,
        totals,
    })
}

/// Regularized Heaviside projection `1 - exp(-beta v) + v exp(-beta)`.
pub fn heaviside(v: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return v;
    }
    1.0 - (-beta * v).exp() + v * (-beta).exp()
}

pub fn heaviside_derivative(v: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    beta * (-beta * v).exp() + (-beta).exp()
}

/// Pseudo-densities together with the intermediate fields needed by the
/// reverse pass.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub rho: Vec<f64>,
    /// Filtered design `A x`.
    pub filtered: Vec<f64>,
    /// Interpolated penalized density, the argument of the projection.
    pub interpolated: Vec<f64>,
    pub penalty: f64,
    pub beta: f64,
    pub x_min: f64,
    stamp: u64,
}

/// Filter plus the continuation parameters `(p, beta, x_min)`.
#[derive(Debug, Clone)]
pub struct SimpChain {
    filter: FilterMatrix,
    penalty: f64,
    beta: f64,
    x_min: f64,
    stamp: u64,
}

impl SimpChain {
    pub fn new(filter: FilterMatrix, penalty: f64, beta: f64, x_min: f64) -> Result<Self> {
        validate(penalty, beta, x_min)?;
        Ok(Self {
            filter,
            penalty,
            beta,
            x_min,
            stamp: next_stamp(),
        })
    }

    pub fn filter(&self) -> &FilterMatrix {
        &self.filter
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn n(&self) -> usize {
        self.filter.n()
    }

    /// Changes the continuation parameters; previously computed fields
    /// become stale.
    pub fn set_parameters(&mut self, penalty: f64, beta: f64) -> Result<()> {
        validate(penalty, beta, self.x_min)?;
        self.penalty = penalty;
        self.beta = beta;
        self.stamp = next_stamp();
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<DensityField> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "design has {} entries, filter has {}",
                x.len(),
                self.n()
            )));
        }
        // rows sum to one only up to rounding
        let filtered: Vec<f64> = self
            .filter
            .apply(x)
            .into_iter()
            .map(|y| y.clamp(0.0, 1.0))
            .collect();
        let interpolated: Vec<f64> = filtered
            .iter()
            .map(|&y| {
                let z = y.powf(self.penalty);
                // (1 - x_min) z + x_min, exact at both ends
                z + self.x_min * (1.0 - z)
            })
            .collect();
        let rho = interpolated
            .iter()
            .map(|&w| heaviside(w, self.beta))
            .collect();
        Ok(DensityField {
            rho,
            filtered,
            interpolated,
            penalty: self.penalty,
            beta: self.beta,
            x_min: self.x_min,
            stamp: self.stamp,
        })
    }

    /// Maps `df/drho` to `df/dx` through the chain that produced `field`.
    pub fn backprop(&self, field: &DensityField, df_drho: &[f64]) -> Result<Vec<f64>> {
        if field.stamp != self.stamp {
            return Err(Error::Stale(
                "density field was produced with different chain parameters".into(),
            ));
        }
        if df_drho.len() != field.rho.len() {
            return Err(Error::Dimension(format!(
                "gradient has {} entries, field has {}",
                df_drho.len(),
                field.rho.len()
            )));
        }
        let p = self.penalty;
        let dy: Vec<f64> = df_drho
            .iter()
            .zip(field.filtered.iter().zip(&field.interpolated))
            .map(|(&g, (&y, &w))| {
                let dz_dy = if p == 1.0 { 1.0 } else { p * y.powf(p - 1.0) };
                g * heaviside_derivative(w, self.beta) * (1.0 - self.x_min) * dz_dy
            })
            .collect();
        Ok(self.filter.apply_transpose(&dy))
    }
}

fn validate(penalty: f64, beta: f64, x_min: f64) -> Result<()> {
    if !(penalty >= 1.0) {
        return Err(Error::Parameter(format!(
            "penalty must be >= 1, got {penalty}"
        )));
    }
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("beta must be >= 0, got {beta}")));
    }
    if !(x_min > 0.0 && x_min < 1.0) {
        return Err(Error::Parameter(format!(
            "x_min must lie in (0, 1), got {x_min}"
        )));
    }
    Ok(())
}
