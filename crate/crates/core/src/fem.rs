//! Structured plane-stress finite elements.
//!
//! The ground mesh is a rectangle of `nx * ny` unit-square bilinear (Q4)
//! elements. Nodes are numbered column by column (`node = i * (ny + 1) + j`)
//! which keeps the half bandwidth of the stiffness matrix at
//! `2 * (ny + 2) + 1` and lets the global system be factorized with a dense
//! banded Cholesky decomposition.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector, SMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type ElementMatrix = SMatrix<f64, 8, 8>;

/// Isotropic linear elastic material for a plane-stress sheet.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Material {
    /// Young's modulus in MPa.
    pub youngs: f64,
    pub poisson: f64,
    /// Sheet thickness in mm.
    pub thickness: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            youngs: 1.0,
            poisson: 0.3,
            thickness: 1.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs > 0.0) {
            return Err(Error::Parameter(format!(
                "Young's modulus must be positive, got {}",
                self.youngs
            )));
        }
        if !(self.poisson > -1.0 && self.poisson < 0.5) {
            return Err(Error::Parameter(format!(
                "Poisson ratio must lie in (-1, 0.5), got {}",
                self.poisson
            )));
        }
        if !(self.thickness > 0.0) {
            return Err(Error::Parameter(format!(
                "thickness must be positive, got {}",
                self.thickness
            )));
        }
        Ok(())
    }
}

/// Element stiffness shared by every element of a uniform mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementStiffness {
    pub ke: ElementMatrix,
}

/// Plane-stress stiffness of a unit-square Q4 element, integrated with 2x2
/// Gauss quadrature.
///
/// Local nodes run counter-clockwise from the lower-left corner and the
/// local dofs are `(ux0, uy0, ux1, uy1, ..)`.
pub fn element_stiffness_q4(material: &Material) -> Result<ElementStiffness> {
    material.validate()?;
    let Material {
        youngs: e,
        poisson: nu,
        thickness,
    } = *material;

    let scale = e / (1.0 - nu * nu);
    let d = nalgebra::Matrix3::new(
        scale,
        scale * nu,
        0.0,
        scale * nu,
        scale,
        0.0,
        0.0,
        0.0,
        scale * (1.0 - nu) / 2.0,
    );

    const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let g = 1.0 / 3f64.sqrt();
    // Unit square: x = (xi + 1) / 2, so d/dx = 2 d/dxi and det J = 1/4.
    let det_j = 0.25;

    let mut ke = ElementMatrix::zeros();
    for &xi in &[-g, g] {
        for &eta in &[-g, g] {
            let mut b = SMatrix::<f64, 3, 8>::zeros();
            for (a, &(xa, ya)) in CORNERS.iter().enumerate() {
                let dn_dx = 2.0 * 0.25 * xa * (1.0 + ya * eta);
                let dn_dy = 2.0 * 0.25 * ya * (1.0 + xa * xi);
                b[(0, 2 * a)] = dn_dx;
                b[(1, 2 * a + 1)] = dn_dy;
                b[(2, 2 * a)] = dn_dy;
                b[(2, 2 * a + 1)] = dn_dx;
            }
            ke += b.transpose() * d * b * (det_j * thickness);
        }
    }
    // Exact symmetry regardless of rounding in the quadrature sum.
    let ke = (ke + ke.transpose()) * 0.5;
    Ok(ElementStiffness { ke })
}

/// Rectangular ground mesh of unit-square Q4 elements.
#[derive(Debug, Clone)]
pub struct GroundMesh {
    pub nx: usize,
    pub ny: usize,
    pub material: Material,
    fixed: Vec<bool>,
    fixed_dofs: Vec<usize>,
}

impl GroundMesh {
    pub fn new(
        nx: usize,
        ny: usize,
        material: Material,
        fixed_dofs: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Parameter(format!(
                "mesh needs at least one element per direction, got {nx}x{ny}"
            )));
        }
        material.validate()?;
        let n_dofs = 2 * (nx + 1) * (ny + 1);
        let set: BTreeSet<usize> = fixed_dofs.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&d| d >= n_dofs) {
            return Err(Error::Parameter(format!(
                "fixed dof {bad} out of range (n_dofs = {n_dofs})"
            )));
        }
        let mut fixed = vec![false; n_dofs];
        for &d in &set {
            fixed[d] = true;
        }
        Ok(Self {
            nx,
            ny,
            material,
            fixed,
            fixed_dofs: set.into_iter().collect(),
        })
    }

    /// Cantilever with every dof on the left edge (`x = 0`) clamped.
    pub fn cantilever(nx: usize, ny: usize, material: Material) -> Result<Self> {
        let fixed: Vec<usize> = (0..=ny).flat_map(|j| [2 * j, 2 * j + 1]).collect();
        Self::new(nx, ny, material, fixed)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        ((node / (self.ny + 1)) as f64, (node % (self.ny + 1)) as f64)
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn element_centroid(&self, e: usize) -> (f64, f64) {
        ((e / self.ny) as f64 + 0.5, (e % self.ny) as f64 + 0.5)
    }

    /// Global nodes of element `e`, counter-clockwise from the lower left.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e / self.ny, e % self.ny);
        [
            self.node_index(i, j),
            self.node_index(i + 1, j),
            self.node_index(i + 1, j + 1),
            self.node_index(i, j + 1),
        ]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed_dofs
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof]
    }

    /// Free dofs of nodes on the outer boundary of the rectangle.
    pub fn surface_free_dofs(&self) -> Vec<usize> {
        let mut dofs = Vec::new();
        for i in 0..=self.nx {
            for j in 0..=self.ny {
                if i == 0 || i == self.nx || j == 0 || j == self.ny {
                    let node = self.node_index(i, j);
                    for d in [2 * node, 2 * node + 1] {
                        if !self.fixed[d] {
                            dofs.push(d);
                        }
                    }
                }
            }
        }
        dofs
    }

    /// Half bandwidth of the assembled stiffness in dof numbering.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.n_elements())
            .map(|e| {
                let dofs = self.element_dofs(e);
                dofs.iter().max().unwrap() - dofs.iter().min().unwrap()
            })
            .max()
            .unwrap_or(0)
    }
}

/// Symmetric matrix stored as its lower band, row by row.
///
/// Row `i` holds columns `i - bw ..= i`; entries left of column 0 are
/// padding and stay zero.
#[derive(Debug, Clone)]
struct LowerBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl LowerBand {
    fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)]
    }

    fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = self.row(i);
            let off = self.bw + lo - i;
            let mut acc = 0.0;
            for (k, j) in (lo..i).enumerate() {
                let a = row[off + k];
                acc += a * x[j];
                out[j] += a * x[i];
            }
            acc += row[self.bw] * x[i];
            out[i] += acc;
        }
    }

    /// In-place Cholesky `A = L L^T`; the band is overwritten by `L`.
    fn cholesky_in_place(&mut self) -> std::result::Result<(), usize> {
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..self.n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut sum = self.data[i * w + (j + bw - i)];
                let ri = i * w + (lo + bw - i);
                let rj = j * w + (lo + bw - j);
                let len = j - lo;
                let (a, b) = (&self.data[ri..ri + len], &self.data[rj..rj + len]);
                sum -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(i);
                    }
                    self.data[i * w + bw] = sum.sqrt();
                } else {
                    self.data[i * w + (j + bw - i)] = sum / self.data[j * w + bw];
                }
            }
        }
        Ok(())
    }

    /// Solves `L L^T x = b` in place with a factor produced by
    /// [`LowerBand::cholesky_in_place`].
    fn cholesky_solve(&self, x: &mut [f64]) {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let row = self.row(i);
            let off = bw + lo - i;
            let s: f64 = row[off..bw].iter().zip(&x[lo..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / row[bw];
        }
        for i in (0..self.n).rev() {
            x[i] /= self.row(i)[bw];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            let row = self.row(i);
            let off = bw + lo - i;
            for (k, j) in (lo..i).enumerate() {
                x[j] -= row[off + k] * xi;
            }
        }
    }
}

/// Assembled, constrained and factorized `K(rho) = sum_e rho_e K_e`.
///
/// The system is immutable after construction apart from the solve counter,
/// which counts every right-hand side passed through [`GlobalSystem::solve_multi`].
#[derive(Debug)]
pub struct GlobalSystem {
    mesh: GroundMesh,
    ke: ElementStiffness,
    rho: Vec<f64>,
    stiffness: LowerBand,
    factor: LowerBand,
    solves: AtomicUsize,
    stamp: u64,
}

static SYSTEM_STAMPS: AtomicU64 = AtomicU64::new(1);

impl GlobalSystem {
    pub fn mesh(&self) -> &GroundMesh {
        &self.mesh
    }

    pub fn element_stiffness(&self) -> &ElementStiffness {
        &self.ke
    }

    /// Identifier unique to this assembly; caches compare against it.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn densities(&self) -> &[f64] {
        &self.rho
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    /// Cumulative number of right-hand sides solved against this factor.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::SeqCst)
    }

    /// Solves `K U = B` column by column. Fixed-dof rows of `B` are ignored
    /// and come back as zeros in `U`.
    pub fn solve_multi(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n_dofs();
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, system has {n} dofs",
                b.nrows()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::Dimension("right-hand side has no columns".into()));
        }
        let mut u = b.clone();
        u.as_mut_slice().par_chunks_mut(n).for_each(|col| {
            for &d in self.mesh.fixed_dofs() {
                col[d] = 0.0;
            }
            self.factor.cholesky_solve(col);
        });
        self.solves.fetch_add(b.ncols(), Ordering::SeqCst);
        Ok(u)
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.solve_multi(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(DVector::from_column_slice(u.as_slice()))
    }

    /// `K x` with the constrained operator (unit diagonal on fixed dofs).
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.stiffness.mul_vec(x.as_slice(), out.as_mut_slice());
        out
    }

    /// `a_e^T k_e b_e`, the energy-like product used by every design gradient.
    #[inline]
    pub fn element_product(&self, e: usize, a: &[f64], b: &[f64]) -> f64 {
        let dofs = self.mesh.element_dofs(e);
        let mut ae = [0.0; 8];
        let mut be = [0.0; 8];
        for (k, &d) in dofs.iter().enumerate() {
            ae[k] = a[d];
            be[k] = b[d];
        }
        let ke = &self.ke.ke;
        let mut acc = 0.0;
        for r in 0..8 {
            let mut kb = 0.0;
            for c in 0..8 {
                kb += ke[(r, c)] * be[c];
            }
            acc += ae[r] * kb;
        }
        acc
    }

    /// Dense copy of the constrained stiffness matrix, for small meshes.
    pub fn stiffness_dense(&self) -> DMatrix<f64> {
        let n = self.n_dofs();
        DMatrix::from_fn(n, n, |i, j| self.stiffness.get(i, j))
    }
}

/// Assembles `K = sum_e rho_e K_e`, applies the Dirichlet conditions by
/// row/column elimination with a unit diagonal, and factorizes.
pub fn assemble_and_factorize(mesh: &GroundMesh, rho: &[f64]) -> Result<GlobalSystem> {
    let ke = element_stiffness_q4(&mesh.material)?;
    assemble_with(mesh, &ke, rho)
}

pub fn assemble_with(
    mesh: &GroundMesh,
    ke: &ElementStiffness,
    rho: &[f64],
) -> Result<GlobalSystem> {
    let n_e = mesh.n_elements();
    if rho.len() != n_e {
        return Err(Error::Dimension(format!(
            "density field has {} entries, mesh has {n_e} elements",
            rho.len()
        )));
    }
    if let Some((e, &r)) = rho
        .iter()
        .enumerate()
        .find(|(_, &r)| !(r > 0.0) || !r.is_finite())
    {
        return Err(Error::Assembly(format!(
            "element {e} has non-positive density {r}"
        )));
    }
    if mesh.fixed_dofs().is_empty() {
        return Err(Error::Assembly(
            "no Dirichlet dofs: stiffness is singular".into(),
        ));
    }

    let n = mesh.n_dofs();
    let mut k = LowerBand::zeros(n, mesh.half_bandwidth());
    for (e, &r) in rho.iter().enumerate() {
        let dofs = mesh.element_dofs(e);
        for (a, &da) in dofs.iter().enumerate() {
            if mesh.is_fixed(da) {
                continue;
            }
            for (b, &db) in dofs.iter().enumerate() {
                if db > da || mesh.is_fixed(db) {
                    continue;
                }
                let idx = k.idx(da, db);
                k.data[idx] += r * ke.ke[(a, b)];
            }
        }
    }
    for &d in mesh.fixed_dofs() {
        let idx = k.idx(d, d);
        k.data[idx] = 1.0;
    }

    let mut factor = k.clone();
    factor.cholesky_in_place().map_err(|row| {
        Error::Assembly(format!(
            "stiffness is not positive definite (pivot at dof {row}); check supports and densities"
        ))
    })?;

    Ok(GlobalSystem {
        mesh: mesh.clone(),
        ke: ke.clone(),
        rho: rho.to_vec(),
        stiffness: k,
        factor,
        solves: AtomicUsize::new(0),
        stamp: SYSTEM_STAMPS.fetch_add(1, Ordering::Relaxed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Closed-form Q4 plane-stress stiffness of a unit square.
    fn closed_form_ke(e: f64, nu: f64) -> ElementMatrix {
        let k = [
            0.5 - nu / 6.0,
            0.125 + nu / 8.0,
            -0.25 - nu / 12.0,
            -0.125 + 3.0 * nu / 8.0,
            -0.25 + nu / 12.0,
            -0.125 - nu / 8.0,
            nu / 6.0,
            0.125 - 3.0 * nu / 8.0,
        ];
        let idx = [
            [0, 1, 2, 3, 4, 5, 6, 7],
            [1, 0, 7, 6, 5, 4, 3, 2],
            [2, 7, 0, 5, 6, 3, 4, 1],
            [3, 6, 5, 0, 7, 2, 1, 4],
            [4, 5, 6, 7, 0, 1, 2, 3],
            [5, 4, 3, 2, 1, 0, 7, 6],
            [6, 3, 4, 1, 2, 7, 0, 5],
            [7, 2, 1, 4, 3, 6, 5, 0],
        ];
        ElementMatrix::from_fn(|r, c| e / (1.0 - nu * nu) * k[idx[r][c]])
    }

    fn mat(e: f64, nu: f64) -> Material {
        Material {
            youngs: e,
            poisson: nu,
            thickness: 1.0,
        }
    }

    #[test]
    fn ke_matches_closed_form() {
        let ke = element_stiffness_q4(&mat(1.0, 0.3)).unwrap().ke;
        assert_relative_eq!(ke[(0, 0)], 0.494505494505, epsilon = 1e-9);
        let oracle = closed_form_ke(1.0, 0.3);
        assert!((ke - oracle).amax() < 1e-12, "{ke} vs {oracle}");
    }

    #[test]
    fn ke_linear_in_youngs() {
        let k1 = element_stiffness_q4(&mat(1.0, 0.3)).unwrap().ke;
        let k2 = element_stiffness_q4(&mat(2.0, 0.3)).unwrap().ke;
        assert!((k2 - 2.0 * k1).amax() < 1e-14);
    }

    #[test]
    fn ke_rigid_body_modes() {
        let ke = element_stiffness_q4(&mat(3.0, 0.2)).unwrap().ke;
        let tx = nalgebra::SVector::<f64, 8>::from_fn(|i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        let ty = nalgebra::SVector::<f64, 8>::from_fn(|i, _| if i % 2 == 1 { 1.0 } else { 0.0 });
        // rotation about the centroid: u = -(y - 1/2), v = x - 1/2
        let coords = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let rot = nalgebra::SVector::<f64, 8>::from_fn(|i, _| {
            let (x, y) = coords[i / 2];
            if i % 2 == 0 {
                -(y - 0.5)
            } else {
                x - 0.5
            }
        });
        for v in [tx, ty, rot] {
            assert!((ke * v).amax() < 1e-14);
        }
        let eig = ke.symmetric_eigen().eigenvalues;
        let zeros = eig.iter().filter(|l| l.abs() < 1e-12).count();
        assert_eq!(zeros, 3);
        assert!(eig.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn invalid_material_rejected() {
        assert!(matches!(
            element_stiffness_q4(&mat(0.0, 0.3)),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            element_stiffness_q4(&mat(1.0, 0.5)),
            Err(Error::Parameter(_))
        ));
        assert!(element_stiffness_q4(&mat(1.0, -1.0)).is_err());
    }

    /// Dense scatter-add with the closed-form element matrix.
    fn dense_oracle(mesh: &GroundMesh, rho: &[f64]) -> DMatrix<f64> {
        let ke =
            closed_form_ke(mesh.material.youngs, mesh.material.poisson) * mesh.material.thickness;
        let n = mesh.n_dofs();
        let mut k = DMatrix::zeros(n, n);
        for (e, &r) in rho.iter().enumerate() {
            let dofs = mesh.element_dofs(e);
            for a in 0..8 {
                for b in 0..8 {
                    k[(dofs[a], dofs[b])] += r * ke[(a, b)];
                }
            }
        }
        for &d in mesh.fixed_dofs() {
            for j in 0..n {
                k[(d, j)] = 0.0;
                k[(j, d)] = 0.0;
            }
            k[(d, d)] = 1.0;
        }
        k
    }

    #[test]
    fn assembly_matches_dense_oracle() {
        let mesh = GroundMesh::cantilever(2, 1, Material::default()).unwrap();
        let sys = assemble_and_factorize(&mesh, &[1.0, 0.5]).unwrap();
        let diff = (sys.stiffness_dense() - dense_oracle(&mesh, &[1.0, 0.5])).amax();
        assert!(diff <= 1e-12, "max diff {diff}");
    }

    #[test]
    fn unconstrained_scatter_is_symmetric() {
        let mesh = GroundMesh::cantilever(3, 2, Material::default()).unwrap();
        let rho: Vec<f64> = (0..6).map(|e| 0.1 + 0.15 * e as f64).collect();
        let k = dense_oracle(&mesh, &rho);
        assert!((&k - k.transpose()).amax() <= 1e-12);
        let sys = assemble_and_factorize(&mesh, &rho).unwrap();
        let kd = sys.stiffness_dense();
        assert!((&kd - kd.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn full_density_and_scaling() {
        let mesh = GroundMesh::cantilever(4, 3, Material::default()).unwrap();
        let ones = vec![1.0; 12];
        let twos = vec![2.0; 12];
        let s1 = assemble_and_factorize(&mesh, &ones).unwrap();
        let s2 = assemble_and_factorize(&mesh, &twos).unwrap();
        assert!((s1.stiffness_dense() - dense_oracle(&mesh, &ones)).amax() < 1e-12);

        let mut f = DVector::zeros(mesh.n_dofs());
        f[mesh.n_dofs() - 1] = -1.0;
        let u1 = s1.solve(&f).unwrap();
        let u2 = s2.solve(&f).unwrap();
        assert!((u1 - 2.0 * u2).amax() < 1e-12);
    }

    #[test]
    fn nonpositive_density_rejected() {
        let mesh = GroundMesh::cantilever(2, 1, Material::default()).unwrap();
        assert!(matches!(
            assemble_and_factorize(&mesh, &[1.0, 0.0]),
            Err(Error::Assembly(_))
        ));
        let floating = GroundMesh::new(2, 1, Material::default(), []).unwrap();
        assert!(matches!(
            assemble_and_factorize(&floating, &[1.0, 1.0]),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn solve_recovers_constructed_solution() {
        let mesh = GroundMesh::cantilever(6, 3, Material::default()).unwrap();
        let rho: Vec<f64> = (0..18)
            .map(|e| 0.05 + (e as f64 * 0.37).sin().abs())
            .collect();
        let sys = assemble_and_factorize(&mesh, &rho).unwrap();
        let n = mesh.n_dofs();
        let mut x = DMatrix::from_fn(n, 4, |i, j| ((i * 7 + j * 3) as f64 * 0.71).cos());
        for &d in mesh.fixed_dofs() {
            x.row_mut(d).fill(0.0);
        }
        let b = sys.stiffness_dense() * &x;
        let u = sys.solve_multi(&b).unwrap();
        let rel = (&u - &x).norm() / x.norm();
        assert!(rel <= 1e-10, "relative error {rel}");
    }

    #[test]
    fn solve_zero_and_counter() {
        let mesh = GroundMesh::cantilever(3, 2, Material::default()).unwrap();
        let sys = assemble_and_factorize(&mesh, &[1.0; 6]).unwrap();
        assert_eq!(sys.solve_count(), 0);
        let n = mesh.n_dofs();
        let u = sys.solve_multi(&DMatrix::zeros(n, 3)).unwrap();
        assert_eq!(u.amax(), 0.0);
        sys.solve_multi(&DMatrix::from_element(n, 7, 1.0)).unwrap();
        assert_eq!(sys.solve_count(), 10);
        assert!(matches!(
            sys.solve_multi(&DMatrix::zeros(n + 1, 1)),
            Err(Error::Dimension(_))
        ));
        assert_eq!(sys.solve_count(), 10);
    }

    #[test]
    fn fixed_rows_are_ignored() {
        let mesh = GroundMesh::cantilever(3, 2, Material::default()).unwrap();
        let sys = assemble_and_factorize(&mesh, &[1.0; 6]).unwrap();
        let mut b = DVector::from_element(mesh.n_dofs(), 1.0);
        let u1 = sys.solve(&b).unwrap();
        for &d in mesh.fixed_dofs() {
            b[d] = 123.0;
            assert_eq!(u1[d], 0.0);
        }
        let u2 = sys.solve(&b).unwrap();
        assert_eq!(u1, u2);
    }

    #[test]
    fn apply_matches_dense() {
        let mesh = GroundMesh::cantilever(3, 2, Material::default()).unwrap();
        let sys = assemble_and_factorize(&mesh, &[0.3, 1.0, 0.7, 0.2, 0.9, 0.5]).unwrap();
        let x = DVector::from_fn(mesh.n_dofs(), |i, _| (i as f64).sin());
        let dense = sys.stiffness_dense() * &x;
        assert!((sys.apply(&x) - dense).amax() < 1e-13);
    }

    #[test]
    fn mesh_layout() {
        let mesh = GroundMesh::cantilever(60, 20, Material::default()).unwrap();
        assert_eq!(mesh.n_dofs(), 2 * 61 * 21);
        assert_eq!(mesh.n_elements(), 1200);
        assert_eq!(mesh.fixed_dofs().len(), 42);
        assert_eq!(mesh.half_bandwidth(), 2 * (20 + 2) + 1);
        assert_eq!(mesh.element_centroid(mesh.element_index(3, 5)), (3.5, 5.5));
        let surface = mesh.surface_free_dofs();
        // boundary nodes: 2 * 61 + 2 * 19 = 160, minus 21 clamped nodes
        assert_eq!(surface.len(), 2 * (160 - 21));
    }

    fn cross_term_bounds_hold(
        k: &DMatrix<f64>,
        ui: &DVector<f64>,
        uj: &DVector<f64>,
        definite: bool,
    ) {
        let q = |a: &DVector<f64>, b: &DVector<f64>| a.dot(&(k * b));
        let s = ui + uj;
        let (ii, jj, ss) = (q(ui, ui), q(uj, uj), q(&s, &s));
        let lhs = q(ui, uj).abs();
        let slack = 1e-12 * (ii.abs() + jj.abs() + ss.abs());
        assert!(lhs <= 0.5 * (ss.abs() + ii.abs() + jj.abs()) + slack);
        if definite {
            assert!(lhs <= 0.5 * ss.abs().max((ii + jj).abs()) + slack);
        }
    }

    proptest::proptest! {
        #[test]
        fn cross_term_bounds(
            rho in proptest::collection::vec(0.05f64..1.0, 6),
            a in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 12),
        ) {
            let mesh = GroundMesh::cantilever(3, 2, Material::default()).unwrap();
            let k = assemble_and_factorize(&mesh, &rho).unwrap().stiffness_dense();
            let n = mesh.n_dofs();
            let ui = DVector::from_column_slice(&a[..n]);
            let uj = DVector::from_column_slice(&a[n..]);
            cross_term_bounds_hold(&k, &ui, &uj, true);
            cross_term_bounds_hold(&(-&k), &ui, &uj, true);
            // symmetric indefinite: only the general bound applies
            let shifted = &k - DMatrix::identity(n, n) * k.diagonal().mean();
            cross_term_bounds_hold(&shifted, &ui, &uj, false);
        }
    }
}
