//! Load scenario sampling and exchange files.
//!
//! Scenario `i` is
//! `f_i = s1 F1 + s2 F2 + s3 F3 + 1/(R - 3) sum_{j=4..R} s_j F_j`
//! with `s1..s3 ~ U(-2, 2)`, `s_j ~ N(0, 1)` and fixed random surface load
//! patterns `F_j` shared by every scenario.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::GroundMesh;

/// Unit point load at a mesh node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLoad {
    /// Node column index (`0..=nx`).
    pub i: usize,
    /// Node row index (`0..=ny`).
    pub j: usize,
    /// Direction; normalised before use.
    pub direction: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLoadSpec {
    pub loads: [PointLoad; 3],
}

impl BaseLoadSpec {
    /// Tip load at mid-height of the free end, and two 45 degree loads on
    /// the top and bottom edges, placed proportionally to a 60 x 20 beam.
    pub fn cantilever_default(mesh: &GroundMesh) -> Self {
        let (nx, ny) = (mesh.nx as f64, mesh.ny as f64);
        let at = |fx: f64, fy: f64| ((fx * nx).round() as usize, (fy * ny).round() as usize);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (i1, j1) = at(1.0, 0.5);
        let (i2, j2) = at(0.5, 1.0);
        let (i3, j3) = at(2.0 / 3.0, 0.0);
        Self {
            loads: [
                PointLoad {
                    i: i1,
                    j: j1,
                    direction: [0.0, -1.0],
                },
                PointLoad {
                    i: i2,
                    j: j2,
                    direction: [h, -h],
                },
                PointLoad {
                    i: i3,
                    j: j3,
                    direction: [-h, -h],
                },
            ],
        }
    }

    fn vectors(&self, mesh: &GroundMesh) -> Result<[DVector<f64>; 3]> {
        let make = |p: &PointLoad| -> Result<DVector<f64>> {
            if p.i > mesh.nx || p.j > mesh.ny {
                return Err(Error::Parameter(format!(
                    "base load node ({}, {}) outside the {}x{} mesh",
                    p.i, p.j, mesh.nx, mesh.ny
                )));
            }
            let norm = (p.direction[0].powi(2) + p.direction[1].powi(2)).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Parameter("base load direction is zero".into()));
            }
            let node = mesh.node_index(p.i, p.j);
            let mut v = DVector::zeros(mesh.n_dofs());
            for (k, d) in [2 * node, 2 * node + 1].into_iter().enumerate() {
                if p.direction[k] != 0.0 && mesh.is_fixed(d) {
                    return Err(Error::Parameter(format!(
                        "base load at node ({}, {}) acts on fixed dof {d}",
                        p.i, p.j
                    )));
                }
                v[d] = p.direction[k] / norm;
            }
            Ok(v)
        };
        Ok([
            make(&self.loads[0])?,
            make(&self.loads[1])?,
            make(&self.loads[2])?,
        ])
    }
}

/// Sampled load matrix `F` (`n_dofs x L`).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadScenarioSet {
    pub loads: DMatrix<f64>,
    pub rank: usize,
    pub seed: u64,
}

impl LoadScenarioSet {
    pub fn n_scenarios(&self) -> usize {
        self.loads.ncols()
    }

    pub fn n_dofs(&self) -> usize {
        self.loads.nrows()
    }

    /// Writes the CSV exchange format: a comment line, a header, then one
    /// line per scenario (column-major).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# stopt load scenarios, one line per column of F")?;
        writeln!(out, "n_dofs,L,R,seed")?;
        writeln!(
            out,
            "{},{},{},{}",
            self.n_dofs(),
            self.n_scenarios(),
            self.rank,
            self.seed
        )?;
        for col in self.loads.column_iter() {
            let line: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines().filter(|l| {
            l.as_ref()
                .map_or(true, |l| !l.trim_start().starts_with('#'))
        });
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing {what}")))?
                .map_err(Error::from)
        };
        let header = next("header")?;
        if header.trim() != "n_dofs,L,R,seed" {
            return Err(Error::Format(format!("unexpected header {header:?}")));
        }
        let meta: Vec<u64> = next("size line")?
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad size line: {e}")))?;
        let [n_dofs, l, rank, seed] = meta[..] else {
            return Err(Error::Format("size line needs 4 fields".into()));
        };
        let (n_dofs, l) = (n_dofs as usize, l as usize);
        let mut data = Vec::with_capacity(n_dofs * l);
        for k in 0..l {
            let line = next(&format!("scenario {k}"))?;
            let before = data.len();
            for tok in line.split(',') {
                data.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("scenario {k}: {e}")))?,
                );
            }
            if data.len() - before != n_dofs {
                return Err(Error::Format(format!(
                    "scenario {k} has {} values, expected {n_dofs}",
                    data.len() - before
                )));
            }
        }
        Ok(Self {
            loads: DMatrix::from_vec(n_dofs, l, data),
            rank: rank as usize,
            seed,
        })
    }

    /// Checks that the set fits `mesh` and carries no load on fixed dofs.
    pub fn validate_for(&self, mesh: &GroundMesh) -> Result<()> {
        if self.n_dofs() != mesh.n_dofs() {
            return Err(Error::Dimension(format!(
                "scenario set has {} dofs, mesh has {}",
                self.n_dofs(),
                mesh.n_dofs()
            )));
        }
        for &d in mesh.fixed_dofs() {
            if self.loads.row(d).iter().any(|&v| v != 0.0) {
                return Err(Error::Parameter(format!(
                    "scenario set loads fixed dof {d}"
                )));
            }
        }
        Ok(())
    }
}

pub fn sample_scenarios(
    mesh: &GroundMesh,
    rank: usize,
    count: usize,
    seed: u64,
    base: &BaseLoadSpec,
) -> Result<LoadScenarioSet> {
    sample_with_coefficients(mesh, rank, count, seed, base).map(|(set, _)| set)
}

/// Like [`sample_scenarios`], also returning the `R x L` coefficient matrix
/// `(s_1, .., s_R)` of every scenario.
pub fn sample_with_coefficients(
    mesh: &GroundMesh,
    rank: usize,
    count: usize,
    seed: u64,
    base: &BaseLoadSpec,
) -> Result<(LoadScenarioSet, DMatrix<f64>)> {
    if rank < 4 {
        return Err(Error::Parameter(format!(
            "rank parameter R must be >= 4, got {rank}"
        )));
    }
    if count == 0 {
        return Err(Error::Parameter("at least one scenario is required".into()));
    }
    let [f1, f2, f3] = base.vectors(mesh)?;
    let surface = mesh.surface_free_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_extra = rank - 3;
    let mut basis = DMatrix::<f64>::zeros(mesh.n_dofs(), rank);
    basis.set_column(0, &f1);
    basis.set_column(1, &f2);
    basis.set_column(2, &f3);
    for j in 3..rank {
        for &d in &surface {
            basis[(d, j)] = rng.sample(StandardNormal);
        }
    }

    let mut coeffs = DMatrix::zeros(rank, count);
    for mut col in coeffs.column_iter_mut() {
        for k in 0..3 {
            col[k] = rng.random_range(-2.0..=2.0);
        }
        for k in 3..rank {
            col[k] = rng.sample(StandardNormal);
        }
    }
    let mut scaled = coeffs.clone();
    for k in 3..rank {
        scaled.row_mut(k).scale_mut(1.0 / n_extra as f64);
    }
    let loads = basis * scaled;
    Ok((LoadScenarioSet { loads, rank, seed }, coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Material;

    fn mesh() -> GroundMesh {
        GroundMesh::cantilever(12, 4, Material::default()).unwrap()
    }

    fn numerical_rank(f: &DMatrix<f64>) -> usize {
        let sv = f.clone().svd(false, false).singular_values;
        let top = sv.max();
        sv.iter().filter(|&&s| s > 1e-8 * top).count()
    }

    #[test]
    fn deterministic_given_seed() {
        let m = mesh();
        let base = BaseLoadSpec::cantilever_default(&m);
        let a = sample_scenarios(&m, 6, 20, 3, &base).unwrap();
        let b = sample_scenarios(&m, 6, 20, 3, &base).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a.loads,
            sample_scenarios(&m, 6, 20, 4, &base).unwrap().loads
        );
    }

    #[test]
    fn rank_and_fixed_dofs() {
        let m = mesh();
        let base = BaseLoadSpec::cantilever_default(&m);
        let set = sample_scenarios(&m, 4, 1000, 1, &base).unwrap();
        assert_eq!(numerical_rank(&set.loads), 4);
        for r in [10, 30] {
            let set = sample_scenarios(&m, r, 200, 2, &base).unwrap();
            assert_eq!(numerical_rank(&set.loads), r);
        }
        set.validate_for(&m).unwrap();
        for &d in m.fixed_dofs() {
            assert!(set.loads.row(d).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rank_below_four_rejected() {
        let m = mesh();
        let base = BaseLoadSpec::cantilever_default(&m);
        assert!(matches!(
            sample_scenarios(&m, 3, 10, 0, &base),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn base_load_on_support_rejected() {
        let m = mesh();
        let mut base = BaseLoadSpec::cantilever_default(&m);
        base.loads[0].i = 0;
        assert!(sample_scenarios(&m, 4, 10, 0, &base).is_err());
        base.loads[0].i = 99;
        assert!(sample_scenarios(&m, 4, 10, 0, &base).is_err());
    }

    #[test]
    fn uniform_coefficient_distribution() {
        let m = mesh();
        let base = BaseLoadSpec::cantilever_default(&m);
        let (set, coeffs) = sample_with_coefficients(&m, 4, 10_000, 5, &base).unwrap();
        let s1 = coeffs.row(0);
        assert!(s1.mean().abs() <= 0.05, "mean {}", s1.mean());
        assert!(s1.iter().all(|v| (-2.0..=2.0).contains(v)));
        assert_eq!(set.n_scenarios(), 10_000);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let m = mesh();
        let base = BaseLoadSpec::cantilever_default(&m);
        let set = sample_scenarios(&m, 7, 5, 9, &base).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let back = LoadScenarioSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, set);

        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            LoadScenarioSet::read_csv(truncated.as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(LoadScenarioSet::read_csv("nope\n".as_bytes()).is_err());
    }
}
