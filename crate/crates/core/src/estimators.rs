//! Exact and randomized evaluation of the load compliances
//! `C = diag(A)`, `A = F^T K^-1 F`, and of their design sensitivities.
//!
//! All design gradients returned here are with respect to the
//! pseudo-densities `rho`; [`crate::simp::SimpChain::backprop`] maps them to
//! the design variables. Every linear solve goes through
//! [`GlobalSystem::solve_multi`], so the solve counter is an exact audit:
//!
//! | path                                  | solves |
//! |---------------------------------------|--------|
//! | exact value (+ adjoint gradient)      | `L`    |
//! | trace estimate value + gradient       | `N`    |
//! | diagonal estimate value               | `N`    |
//! | diagonal estimate value + JVP         | `2N`   |

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_and_factorize, GlobalSystem, GroundMesh};
use crate::probing::{hadamard_order, hadamard_probes, rademacher_probes, ProbeKind, ProbingSet};
use crate::stats::{self, ComplianceStats};

/// Responses `r_i = K^-1 F v_i` kept from a value pass for the gradient pass.
#[derive(Debug, Clone)]
pub struct SolveCache {
    pub probes: DMatrix<f64>,
    pub responses: DMatrix<f64>,
    stamp: u64,
}

impl SolveCache {
    pub fn is_valid_for(&self, sys: &GlobalSystem) -> bool {
        self.stamp == sys.stamp()
    }
}

/// Exact-to-estimated ratios computed once at a reference design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFactors {
    pub gamma_mean: f64,
    pub gamma_std: f64,
    /// Design variables of the reference design.
    pub reference: Vec<f64>,
}

impl CorrectionFactors {
    pub fn identity() -> Self {
        Self {
            gamma_mean: 1.0,
            gamma_std: 1.0,
            reference: Vec::new(),
        }
    }
}

fn check_loads(f: &DMatrix<f64>, sys: &GlobalSystem) -> Result<()> {
    if f.nrows() != sys.n_dofs() {
        return Err(Error::Dimension(format!(
            "load matrix has {} rows, system has {} dofs",
            f.nrows(),
            sys.n_dofs()
        )));
    }
    if f.ncols() == 0 {
        return Err(Error::Dimension("load matrix has no scenarios".into()));
    }
    Ok(())
}

fn check_probes(f: &DMatrix<f64>, probes: &ProbingSet) -> Result<()> {
    if probes.dim() != f.ncols() {
        return Err(Error::Dimension(format!(
            "probes have dimension {}, load matrix has {} scenarios",
            probes.dim(),
            f.ncols()
        )));
    }
    Ok(())
}

/// `g_e = sum_i a_i^T K_e b_i` for every element.
pub fn element_products(sys: &GlobalSystem, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    debug_assert_eq!(a.shape(), b.shape());
    let n = sys.n_dofs();
    let k = a.ncols();
    let (a, b) = (a.as_slice(), b.as_slice());
    (0..sys.mesh().n_elements())
        .into_par_iter()
        .map(|e| {
            (0..k)
                .map(|i| sys.element_product(e, &a[i * n..(i + 1) * n], &b[i * n..(i + 1) * n]))
                .sum()
        })
        .collect()
}

fn column_dots(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter()
        .zip(b.column_iter())
        .map(|(x, y)| x.dot(&y))
        .collect()
}

/// `C_i = f_i^T K^-1 f_i` with one solve per scenario.
pub fn exact_compliances(f: &DMatrix<f64>, sys: &GlobalSystem) -> Result<Vec<f64>> {
    check_loads(f, sys)?;
    let u = sys.solve_multi(f)?;
    Ok(column_dots(f, &u))
}

/// Exact compliances together with the displacements `U = K^-1 F`
/// (`L` solves), for gradients whose weights depend on `C`.
pub fn exact_responses(f: &DMatrix<f64>, sys: &GlobalSystem) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_loads(f, sys)?;
    let u = sys.solve_multi(f)?;
    Ok((column_dots(f, &u), u))
}

/// `d(C^T w)/d rho_e = -sum_i w_i u_i^T K_e u_i` from stored displacements.
pub fn weighted_adjoint_gradient(
    sys: &GlobalSystem,
    u: &DMatrix<f64>,
    w: &[f64],
) -> Result<Vec<f64>> {
    if w.len() != u.ncols() || u.nrows() != sys.n_dofs() {
        return Err(Error::Dimension(format!(
            "weight vector has {} entries, displacements are {}x{}",
            w.len(),
            u.nrows(),
            u.ncols()
        )));
    }
    let mut weighted = u.clone();
    for (mut col, &wi) in weighted.column_iter_mut().zip(w) {
        col *= -wi;
    }
    Ok(element_products(sys, &weighted, u))
}

/// Exact compliances and the adjoint gradient of `C^T w`.
pub fn exact_compliances_and_jvp(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_loads(f, sys)?;
    if w.len() != f.ncols() {
        return Err(Error::Dimension(format!(
            "weight vector has {} entries, expected {}",
            w.len(),
            f.ncols()
        )));
    }
    let (c, u) = exact_responses(f, sys)?;
    let g = weighted_adjoint_gradient(sys, &u, w)?;
    Ok((c, g))
}

/// Exact mean compliance and its gradient with respect to `rho`.
pub fn exact_mean_and_grad(f: &DMatrix<f64>, sys: &GlobalSystem) -> Result<(f64, Vec<f64>)> {
    let l = f.ncols().max(1);
    let (c, g) = exact_compliances_and_jvp(f, sys, &vec![1.0 / l as f64; l])?;
    Ok((stats::mean(&c)?, g))
}

fn probe_responses(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    probes: &ProbingSet,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_loads(f, sys)?;
    check_probes(f, probes)?;
    let y = f * &probes.vectors;
    let r = sys.solve_multi(&y)?;
    Ok((y, r))
}

/// Hutchinson estimate of the mean compliance and its gradient:
/// `mu = 1/(L N) sum_i z_i^T K z_i`, `g_e = -1/(L N) sum_i z_i^T K_e z_i`
/// with `z_i = K^-1 F v_i`. Costs `N` solves.
pub fn estimate_mean_and_grad(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    probes: &ProbingSet,
) -> Result<(f64, Vec<f64>, SolveCache)> {
    let (y, z) = probe_responses(f, sys, probes)?;
    let scale = 1.0 / (f.ncols() * probes.count()) as f64;
    // z^T K z = (F v)^T z for the constrained operator
    let mu = column_dots(&y, &z).iter().sum::<f64>() * scale;
    let grad = element_products(sys, &z, &z)
        .into_iter()
        .map(|g| -scale * g)
        .collect();
    Ok((
        mu,
        grad,
        SolveCache {
            probes: probes.vectors.clone(),
            responses: z,
            stamp: sys.stamp(),
        },
    ))
}

/// Diagonal estimate `C ~ 1/N sum_i D_{v_i} F^T K^-1 F v_i`. Costs `N` solves.
pub fn estimate_diag(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    probes: &ProbingSet,
) -> Result<(Vec<f64>, SolveCache)> {
    let (_, r) = probe_responses(f, sys, probes)?;
    let av = f.transpose() * &r;
    let n = probes.count() as f64;
    let c = av
        .row_iter()
        .zip(probes.vectors.row_iter())
        .map(|(a, v)| a.dot(&v) / n)
        .collect();
    Ok((
        c,
        SolveCache {
            probes: probes.vectors.clone(),
            responses: r,
            stamp: sys.stamp(),
        },
    ))
}

/// Gradient of `C_hat^T w` with respect to `rho` using `N` extra solves:
/// `g_e = -1/N sum_i t_i^T K_e r_i`, `t_i = K^-1 F D_w v_i`.
pub fn grad_weighted_compliances(
    w: &[f64],
    cache: &SolveCache,
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
) -> Result<Vec<f64>> {
    if !cache.is_valid_for(sys) {
        return Err(Error::Stale(
            "solve cache was computed for a different design".into(),
        ));
    }
    check_loads(f, sys)?;
    if w.len() != f.ncols() || cache.probes.nrows() != f.ncols() {
        return Err(Error::Dimension(format!(
            "weights ({}) and probes ({}) must match the {} scenarios",
            w.len(),
            cache.probes.nrows(),
            f.ncols()
        )));
    }
    let mut dv = cache.probes.clone();
    for (mut row, &wi) in dv.row_iter_mut().zip(w) {
        row *= wi;
    }
    let t = sys.solve_multi(&(f * dv))?;
    let n = cache.probes.ncols() as f64;
    Ok(element_products(sys, &t, &cache.responses)
        .into_iter()
        .map(|g| -g / n)
        .collect())
}

/// Diagonal estimate on loads centred at their sample mean:
/// `C_i = d_i + 2 f~_i^T q + mu_f^T q`, `q = K^-1 mu_f`. Costs `N + 1` solves.
pub fn centered_diag_estimate(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    probes: &ProbingSet,
) -> Result<Vec<f64>> {
    check_loads(f, sys)?;
    if f.ncols() < 2 {
        return Err(Error::Parameter(
            "centering needs at least 2 scenarios".into(),
        ));
    }
    let mu_f: DVector<f64> = f.column_mean();
    let mut centred = f.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mu_f;
    }
    let (d, _) = estimate_diag(&centred, sys, probes)?;
    let q = sys.solve(&mu_f)?;
    let base = mu_f.dot(&q);
    Ok(d.iter()
        .zip(centred.column_iter())
        .map(|(di, fi)| di + 2.0 * fi.dot(&q) + base)
        .collect())
}

/// Groups scenario indices by ascending load norm into contiguous clusters
/// of at most `max_cluster_size`.
pub fn cluster_scenarios(f: &DMatrix<f64>, max_cluster_size: usize) -> Result<Vec<Vec<usize>>> {
    if max_cluster_size == 0 {
        return Err(Error::Parameter("cluster size must be at least 1".into()));
    }
    let norms: Vec<f64> = f.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..f.ncols()).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
    Ok(order.chunks(max_cluster_size).map(|c| c.to_vec()).collect())
}

/// Runs the diagonal estimator separately on each cluster and scatters the
/// results back to the original scenario order.
///
/// Each cluster gets `min(n_probes, order)` probes, where `order` is the
/// Hadamard order of the cluster size (unbounded for Rademacher probes).
pub fn clustered_diag_estimate(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    clusters: &[Vec<usize>],
    kind: ProbeKind,
    n_probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_loads(f, sys)?;
    let mut out = vec![f64::NAN; f.ncols()];
    for (k, cluster) in clusters.iter().enumerate() {
        let sub = f.select_columns(cluster.iter());
        let probes = match kind {
            ProbeKind::Hadamard => {
                hadamard_probes(cluster.len(), n_probes.min(hadamard_order(cluster.len())))?
            }
            ProbeKind::Rademacher => {
                rademacher_probes(cluster.len(), n_probes, seed.wrapping_add(k as u64))?
            }
        };
        let (c, _) = estimate_diag(&sub, sys, &probes)?;
        for (&i, ci) in cluster.iter().zip(c) {
            out[i] = ci;
        }
    }
    if out.iter().any(|c| c.is_nan()) {
        return Err(Error::Parameter(
            "clusters do not cover every scenario".into(),
        ));
    }
    Ok(out)
}

/// Per-scenario ratios `C_i / C_hat_i`, for diagnostics only.
pub fn scenario_ratios(exact: &[f64], estimate: &[f64]) -> Vec<f64> {
    exact.iter().zip(estimate).map(|(c, e)| c / e).collect()
}

/// Exact and estimated statistics at one design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsPair {
    pub exact: ComplianceStats,
    pub estimate: ComplianceStats,
}

/// Evaluates both exact (`L` solves) and diagonal-estimated (`N` solves)
/// statistics on an assembled system.
pub fn exact_and_estimated_stats(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    probes: &ProbingSet,
) -> Result<StatsPair> {
    let exact = stats::stats(&exact_compliances(f, sys)?)?;
    let (c_hat, _) = estimate_diag(f, sys, probes)?;
    Ok(StatsPair {
        exact,
        estimate: stats::stats(&c_hat)?,
    })
}

fn ratio(exact: f64, estimate: f64, what: &str) -> Result<f64> {
    if estimate == 0.0 || !estimate.is_finite() {
        return Err(Error::DegenerateCorrection(format!(
            "estimated {what} is {estimate} while the exact value is {exact}"
        )));
    }
    Ok(exact / estimate)
}

/// Correction ratios `mu / mu_hat` and `sigma / sigma_hat` from a system
/// assembled at the reference design `reference`.
pub fn correction_factors(
    f: &DMatrix<f64>,
    sys: &GlobalSystem,
    probes: &ProbingSet,
    reference: &[f64],
) -> Result<CorrectionFactors> {
    let pair = exact_and_estimated_stats(f, sys, probes)?;
    correction_from_stats(&pair, reference)
}

/// Correction ratios from already computed exact and estimated statistics.
pub fn correction_from_stats(pair: &StatsPair, reference: &[f64]) -> Result<CorrectionFactors> {
    Ok(CorrectionFactors {
        gamma_mean: ratio(pair.exact.mu, pair.estimate.mu, "mean")?,
        gamma_std: ratio(pair.exact.sigma, pair.estimate.sigma, "standard deviation")?,
        reference: reference.to_vec(),
    })
}

/// Exact-to-estimated ratios of one sampled design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub mean_ratio: f64,
    pub std_ratio: f64,
}

/// Settings for [`sample_correcting_ratios`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSampling {
    pub n_designs: usize,
    /// Mean of the truncated normal in `(0, 1)`.
    pub mean: f64,
    pub sd: f64,
    pub seed: u64,
    /// Floor applied to sampled densities so that `K` stays definite.
    pub x_min: f64,
}

/// Samples pseudo-density fields from a normal truncated to `[0, 1]` and
/// returns the exact-to-estimated mean and standard deviation ratios of each.
///
/// Design `k` draws from its own ChaCha stream, so results do not depend on
/// thread scheduling.
pub fn sample_correcting_ratios(
    mesh: &GroundMesh,
    f: &DMatrix<f64>,
    probes: &ProbingSet,
    cfg: &RatioSampling,
) -> Result<Vec<RatioSample>> {
    if !(cfg.mean > 0.0 && cfg.mean < 1.0) {
        return Err(Error::Parameter(format!(
            "truncated normal mean must lie in (0, 1), got {}",
            cfg.mean
        )));
    }
    let normal = Normal::new(cfg.mean, cfg.sd)
        .map_err(|e| Error::Parameter(format!("invalid sampling distribution: {e}")))?;
    (0..cfg.n_designs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let rho: Vec<f64> = (0..mesh.n_elements())
                .map(|_| loop {
                    let v = normal.sample(&mut rng);
                    if (0.0..=1.0).contains(&v) {
                        break v.max(cfg.x_min);
                    }
                })
                .collect();
            let sys = assemble_and_factorize(mesh, &rho)?;
            let pair = exact_and_estimated_stats(f, &sys, probes)?;
            Ok(RatioSample {
                mean_ratio: pair.exact.mu / pair.estimate.mu,
                std_ratio: pair.exact.sigma / pair.estimate.sigma,
            })
        })
        .collect()
}
