//! Probing vectors with entries in `{-1, +1}`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Rademacher,
    Hadamard,
}

/// `L x N` matrix whose columns are the probing vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingSet {
    pub vectors: DMatrix<f64>,
    pub kind: ProbeKind,
    pub seed: Option<u64>,
}

impl ProbingSet {
    /// Scenario dimension `L`.
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// Number of probes `N`.
    pub fn count(&self) -> usize {
        self.vectors.ncols()
    }
}

pub fn rademacher_probes(l: usize, n: usize, seed: u64) -> Result<ProbingSet> {
    if l == 0 || n == 0 {
        return Err(Error::Parameter(format!(
            "probe dimensions must be positive, got L = {l}, N = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // column-major fill keeps probe i independent of N
    let data: Vec<f64> = (0..l * n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Ok(ProbingSet {
        vectors: DMatrix::from_vec(l, n, data),
        kind: ProbeKind::Rademacher,
        seed: Some(seed),
    })
}

/// Smallest power of two `>= l`.
pub fn hadamard_order(l: usize) -> usize {
    l.max(1).next_power_of_two()
}

/// Entry `(r, c)` of the Sylvester Hadamard matrix of any power-of-two order.
///
/// Sylvester doubling gives `H[r][c] = (-1)^popcount(r & c)`.
pub fn sylvester_entry(r: usize, c: usize) -> f64 {
    if (r & c).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// First `n` columns (natural order) of `H_M` truncated to its first `l` rows.
pub fn hadamard_probes(l: usize, n: usize) -> Result<ProbingSet> {
    let order: Vec<usize> = (0..n).collect();
    hadamard_probes_ordered(l, &order)
}

/// Hadamard probes using the given column indices of `H_M`, in that order.
pub fn hadamard_probes_ordered(l: usize, columns: &[usize]) -> Result<ProbingSet> {
    if l == 0 || columns.is_empty() {
        return Err(Error::Parameter(format!(
            "probe dimensions must be positive, got L = {l}, N = {}",
            columns.len()
        )));
    }
    let m = hadamard_order(l);
    if columns.len() > m {
        return Err(Error::Parameter(format!(
            "{} Hadamard probes requested but the order-{m} matrix has only {m} columns",
            columns.len()
        )));
    }
    if let Some(&c) = columns.iter().find(|&&c| c >= m) {
        return Err(Error::Parameter(format!(
            "Hadamard column {c} out of range for order {m}"
        )));
    }
    Ok(ProbingSet {
        vectors: DMatrix::from_fn(l, columns.len(), |r, k| sylvester_entry(r, columns[k])),
        kind: ProbeKind::Hadamard,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit Sylvester doubling `H_2k = [[H, H], [H, -H]]`.
    fn sylvester_by_doubling(m: usize) -> DMatrix<f64> {
        let mut h = DMatrix::from_element(1, 1, 1.0);
        while h.nrows() < m {
            let k = h.nrows();
            let mut next = DMatrix::zeros(2 * k, 2 * k);
            next.view_mut((0, 0), (k, k)).copy_from(&h);
            next.view_mut((0, k), (k, k)).copy_from(&h);
            next.view_mut((k, 0), (k, k)).copy_from(&h);
            next.view_mut((k, k), (k, k)).copy_from(&(-&h));
            h = next;
        }
        h
    }

    #[test]
    fn closed_form_matches_doubling() {
        for m in [1, 2, 4, 8, 32] {
            let h = sylvester_by_doubling(m);
            assert_eq!(hadamard_probes(m, m).unwrap().vectors, h);
        }
    }

    #[test]
    fn base_case() {
        let v = hadamard_probes(2, 2).unwrap().vectors;
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn full_basis_orthogonal() {
        let v = hadamard_probes(4, 4).unwrap().vectors;
        assert_eq!(v.transpose() * &v, DMatrix::identity(4, 4) * 4.0);
        // column 0 is all ones
        assert!(v.column(0).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn truncation_keeps_leading_rows() {
        let v = hadamard_probes(3, 4).unwrap().vectors;
        let h4 = sylvester_by_doubling(4);
        assert_eq!(v, h4.rows(0, 3).into_owned());
    }

    #[test]
    fn too_many_columns() {
        assert!(matches!(hadamard_probes(5, 9), Err(Error::Parameter(_))));
        assert!(hadamard_probes(5, 8).is_ok());
        assert!(hadamard_probes_ordered(4, &[0, 4]).is_err());
    }

    #[test]
    fn ordered_columns() {
        let v = hadamard_probes_ordered(8, &[3, 1]).unwrap().vectors;
        let h = sylvester_by_doubling(8);
        assert_eq!(v.column(0), h.column(3));
        assert_eq!(v.column(1), h.column(1));
    }

    #[test]
    fn pair_sign_balance_for_power_of_two() {
        for l in [2, 8, 64] {
            let v = hadamard_probes(l, l).unwrap().vectors;
            for i in 0..l {
                for j in 0..l {
                    let s: f64 = (0..l).map(|k| v[(i, k)] * v[(j, k)]).sum();
                    let expect = if i == j { l as f64 } else { 0.0 };
                    assert_eq!(s, expect);
                }
            }
        }
    }

    #[test]
    fn rademacher_deterministic_and_signed() {
        let a = rademacher_probes(50, 7, 42).unwrap();
        let b = rademacher_probes(50, 7, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.vectors, rademacher_probes(50, 7, 43).unwrap().vectors);
        assert!(a.vectors.iter().all(|&x| x == 1.0 || x == -1.0));
        assert!(rademacher_probes(0, 1, 0).is_err());
    }

    #[test]
    fn rademacher_mean_near_zero() {
        let (l, n) = (1000, 100);
        for seed in 0..5 {
            let v = rademacher_probes(l, n, seed).unwrap().vectors;
            let mean = v.sum() / (l * n) as f64;
            assert!(
                mean.abs() <= 4.0 / ((l * n) as f64).sqrt(),
                "seed {seed}: {mean}"
            );
        }
    }
}
