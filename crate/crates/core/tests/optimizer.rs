use nalgebra::DMatrix;
use stopt_core::estimators::exact_mean_and_grad;
use stopt_core::fem::{assemble_and_factorize, GroundMesh, Material};
use stopt_core::mma::{mma_solve, Evaluation, MmaParams, Problem};
use stopt_core::simp::{build_filter, SimpChain};
use stopt_core::Result;

struct SingleLoad {
    mesh: GroundMesh,
    f: DMatrix<f64>,
    chain: SimpChain,
    vf: f64,
}

impl Problem for SingleLoad {
    fn n_vars(&self) -> usize {
        self.mesh.n_elements()
    }
    fn n_constraints(&self) -> usize {
        1
    }
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation> {
        let field = self.chain.forward(x)?;
        let sys = assemble_and_factorize(&self.mesh, &field.rho)?;
        let (c, g) = exact_mean_and_grad(&self.f, &sys)?;
        let n = x.len() as f64;
        Ok(Evaluation {
            objective: c,
            gradient: self.chain.backprop(&field, &g)?,
            constraints: vec![x.iter().sum::<f64>() / n - self.vf],
            constraint_gradients: vec![vec![1.0 / n; x.len()]],
        })
    }
}

fn tip_loaded(nx: usize, ny: usize) -> SingleLoad {
    let mesh = GroundMesh::cantilever(nx, ny, Material::default()).unwrap();
    let mut f = DMatrix::zeros(mesh.n_dofs(), 1);
    f[(2 * mesh.node_index(nx, ny / 2) + 1, 0)] = -1.0;
    let chain = SimpChain::new(build_filter(&mesh, 1.5).unwrap(), 3.0, 0.0, 1e-3).unwrap();
    SingleLoad {
        mesh,
        f,
        chain,
        vf: 0.4,
    }
}

#[test]
fn single_load_compliance_decreases_and_meets_volume() {
    let mut p = tip_loaded(12, 4);
    let x0 = vec![0.4; p.n_vars()];
    let r = mma_solve(&mut p, &x0, &MmaParams::default(), 1e-4).unwrap();
    assert!(r.converged, "kkt {:?}", r.history.last());
    let objectives: Vec<f64> = r.history.iter().map(|h| h.objective).collect();
    for w in objectives.windows(2).skip(5) {
        assert!(w[1] <= w[0], "objective rose: {objectives:?}");
    }
    assert!(objectives.last().unwrap() < &objectives[0]);
    let v = r.x.iter().sum::<f64>() / r.x.len() as f64;
    assert!((v - 0.4).abs() <= 1e-3, "V = {v}");
    assert!(r.x.iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn every_iterate_stays_in_box() {
    let mut p = tip_loaded(8, 4);
    let x0 = vec![0.4; p.n_vars()];
    let params = MmaParams {
        max_iters: 30,
        ..MmaParams::default()
    };
    let r = mma_solve(&mut p, &x0, &params, 1e-12).unwrap();
    assert_eq!(r.history.len(), 31);
    // each asymptote pair straddles the iterate it was built from
    for (low, upp) in &r.asymptotes {
        assert!(low.iter().zip(upp).all(|(l, u)| l < u));
    }
    assert!(r.x.iter().all(|&x| (0.0..=1.0).contains(&x)));
}
