//! Mixed Darcy flow with a lognormal permeability, solved as a saddle-point
//! system by block-preconditioned MINRES.
//!
//! With unknowns (q, p̃ = -p) the discrete system reads
//!
//! ```text
//! [ M_{1/k}  Bᵀ ] [q]   [f]
//! [ B        0  ] [p̃] = [0]
//! ```
//!
//! where `f_j = -p_D · n_j` collects the prescribed pressure on inflow and
//! outflow faces (`n_j` the outward sign of face `j`) and the remaining
//! boundary faces carry no flow.

use crate::error::{Error, Result};
use crate::fem::{assemble_divergence, assemble_rt_mass};
use crate::linalg::{minres_solve, CsrMatrix, Identity, Preconditioner, SkylineCholesky, SolveReport, SolverOptions};
use crate::mesh::{CartesianMesh, Side};

/// Cellwise permeability on the physical mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    k: Vec<f64>,
}

impl Coefficient {
    pub fn from_values(k: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = k.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("permeability must be positive and finite, cell {i} has {v}")));
        }
        Ok(Coefficient { k })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::from_values(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.k
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }
}

/// k = exp(m + θ), with the mean log field m defaulting to zero.
pub fn build_coefficient(theta: &[f64], mean_log_field: Option<&[f64]>) -> Result<Coefficient> {
    if let Some(m) = mean_log_field {
        if m.len() != theta.len() {
            return Err(Error::invalid(format!(
                "mean log field has {} entries, field has {}",
                m.len(),
                theta.len()
            )));
        }
    }
    if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("non-finite field value at cell {i}")));
    }
    let k = theta
        .iter()
        .enumerate()
        .map(|(i, t)| (t + mean_log_field.map_or(0.0, |m| m[i])).exp())
        .collect();
    Coefficient::from_values(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DarcyPreconditioner {
    None,
    /// diag(H, B H⁻¹ Bᵀ) with H the diagonal of the weighted face mass.
    #[default]
    BlockDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarcyOptions {
    pub solver: SolverOptions,
    pub preconditioner: DarcyPreconditioner,
    pub inflow_pressure: f64,
    pub outflow_pressure: f64,
}

impl Default for DarcyOptions {
    fn default() -> Self {
        DarcyOptions {
            solver: SolverOptions {
                rtol: 1e-10,
                ..Default::default()
            },
            preconditioner: DarcyPreconditioner::BlockDiagonal,
            inflow_pressure: 1.0,
            outflow_pressure: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DarcySolution {
    /// Total flux through each face, positive along the face's axis.
    pub q: Vec<f64>,
    /// Cell pressures.
    pub p: Vec<f64>,
    pub report: SolveReport,
}

/// Flow across the box along `flow_axis`: pressure prescribed on the low
/// (inflow) and high (outflow) sides, no flow through the others.
#[derive(Debug, Clone)]
pub struct DarcyProblem {
    mesh: CartesianMesh,
    flow_axis: usize,
    /// Divergence with no-flow columns zeroed.
    b: CsrMatrix,
    no_flow: Vec<bool>,
    inflow: Vec<usize>,
    outflow: Vec<usize>,
    options: DarcyOptions,
}

impl DarcyProblem {
    pub fn new(mesh: &CartesianMesh, flow_axis: usize, options: DarcyOptions) -> Result<Self> {
        if flow_axis >= mesh.dim() {
            return Err(Error::invalid(format!("flow axis {flow_axis} on a {}-d mesh", mesh.dim())));
        }
        let inflow = mesh.boundary_faces(flow_axis, Side::Low);
        let outflow = mesh.boundary_faces(flow_axis, Side::High);
        let mut no_flow = vec![false; mesh.num_faces()];
        for f in mesh.all_boundary_faces() {
            no_flow[f] = true;
        }
        for &f in inflow.iter().chain(&outflow) {
            no_flow[f] = false;
        }
        let b = assemble_divergence(mesh).zero_cols(&no_flow);
        Ok(DarcyProblem {
            mesh: mesh.clone(),
            flow_axis,
            b,
            no_flow,
            inflow,
            outflow,
            options,
        })
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn flow_axis(&self) -> usize {
        self.flow_axis
    }

    pub fn options(&self) -> &DarcyOptions {
        &self.options
    }

    pub fn divergence(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn outflow_faces(&self) -> &[usize] {
        &self.outflow
    }

    pub fn inflow_faces(&self) -> &[usize] {
        &self.inflow
    }

    /// Unknowns in the saddle system: faces + cells.
    pub fn num_dofs(&self) -> usize {
        self.mesh.num_faces() + self.mesh.num_cells()
    }

    /// Right-hand side of the flux equation.
    pub fn flux_rhs(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.mesh.num_faces()];
        for (faces, side, p) in [
            (&self.inflow, Side::Low, self.options.inflow_pressure),
            (&self.outflow, Side::High, self.options.outflow_pressure),
        ] {
            for &j in faces {
                f[j] = -p * side.outward_sign();
            }
        }
        f
    }

    fn saddle_matrix(&self, m: &CsrMatrix) -> CsrMatrix {
        let nf = self.mesh.num_faces();
        let n = nf + self.mesh.num_cells();
        let mut t = Vec::with_capacity(m.nnz() + 2 * self.b.nnz());
        for i in 0..nf {
            let (cols, vals) = m.row(i);
            t.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
        }
        for c in 0..self.mesh.num_cells() {
            let (cols, vals) = self.b.row(c);
            for (&j, &v) in cols.iter().zip(vals) {
                if v != 0.0 {
                    t.push((nf + c, j, v));
                    t.push((j, nf + c, v));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    /// Solve for one permeability realization.
    pub fn solve(&self, coefficient: &Coefficient) -> Result<DarcySolution> {
        let nf = self.mesh.num_faces();
        let nc = self.mesh.num_cells();
        if coefficient.len() != nc {
            return Err(Error::invalid(format!(
                "coefficient has {} entries for {nc} cells",
                coefficient.len()
            )));
        }
        let inv_k: Vec<f64> = coefficient.values().iter().map(|k| 1.0 / k).collect();
        let m = assemble_rt_mass(&self.mesh, &inv_k)?.eliminate_symmetric(&self.no_flow);
        let a = self.saddle_matrix(&m);
        let mut rhs = self.flux_rhs();
        rhs.resize(nf + nc, 0.0);

        let (x, report) = match self.options.preconditioner {
            DarcyPreconditioner::None => minres_solve(&a, &rhs, None, &self.options.solver, &Identity),
            DarcyPreconditioner::BlockDiagonal => {
                let pc = BlockDiagonal::new(&m, &self.b)?;
                minres_solve(&a, &rhs, None, &self.options.solver, &pc)
            }
        };
        if !report.converged {
            return Err(Error::SolverFailure {
                context: "darcy",
                level: None,
                report,
            });
        }
        let q = x[..nf].to_vec();
        let p = x[nf..].iter().map(|v| -v).collect();
        Ok(DarcySolution { q, p, report })
    }

    /// Mean outward flux density over the outflow boundary.
    pub fn effective_permeability(&self, solution: &DarcySolution) -> Result<f64> {
        effective_permeability(solution, &self.mesh, self.flow_axis, Side::High)
    }

    /// ‖B q‖∞
    pub fn divergence_residual(&self, solution: &DarcySolution) -> f64 {
        self.b.mul_vec(&solution.q).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// (1/|Γ_out|) Σ_{j ∈ Γ_out} n_j q_j over the boundary side `(axis, side)`.
pub fn effective_permeability(solution: &DarcySolution, mesh: &CartesianMesh, axis: usize, side: Side) -> Result<f64> {
    let faces = mesh.boundary_faces(axis, side);
    if faces.is_empty() {
        return Err(Error::invalid("outflow boundary is empty"));
    }
    let flux: f64 = faces.iter().map(|&j| side.outward_sign() * solution.q[j]).sum();
    Ok(flux / (faces.len() as f64 * mesh.face_area(axis)))
}

/// Block-diagonal preconditioner diag(H, B H⁻¹ Bᵀ).
struct BlockDiagonal {
    h_inv: Vec<f64>,
    schur: SkylineCholesky,
}

impl BlockDiagonal {
    fn new(m: &CsrMatrix, b: &CsrMatrix) -> Result<Self> {
        let h_inv: Vec<f64> = m.diagonal().iter().map(|d| 1.0 / d).collect();
        let schur = b.scale_cols(&h_inv).matmul(&b.transpose());
        Ok(BlockDiagonal {
            h_inv,
            schur: SkylineCholesky::factor(&schur)?,
        })
    }
}

impl Preconditioner for BlockDiagonal {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nf = self.h_inv.len();
        for i in 0..nf {
            z[i] = self.h_inv[i] * r[i];
        }
        z[nf..].copy_from_slice(&r[nf..]);
        self.schur.solve_in_place(&mut z[nf..]);
    }
}

/// ‖v‖∞
pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use crate::mesh::build_cartesian_mesh;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b)
    }

    fn unit(dim: usize, n: usize) -> CartesianMesh {
        build_cartesian_mesh(dim, &vec![0.0; dim], &vec![1.0; dim], &vec![n; dim]).unwrap()
    }

    #[test]
    fn coefficient_construction() {
        let k = build_coefficient(&[0.0; 4], None).unwrap();
        assert_eq!(k.values(), &[1.0; 4]);
        let k = build_coefficient(&[std::f64::consts::LN_2; 3], None).unwrap();
        assert!(k.values().iter().all(|v| (v - 2.0).abs() < 1e-15));
        let k = build_coefficient(&[0.5, -0.5], Some(&[1.0, 2.0])).unwrap();
        assert!((k.values()[0] - 1.5f64.exp()).abs() < 1e-14);
        assert!((k.values()[1] - 1.5f64.exp()).abs() < 1e-14);
        assert!(build_coefficient(&[f64::NAN], None).is_err());
        assert!(build_coefficient(&[0.0], Some(&[0.0, 1.0])).is_err());
        assert!(Coefficient::from_values(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn unit_cube_exact() {
        let mesh = unit(3, 4);
        let prob = DarcyProblem::new(&mesh, 2, DarcyOptions::default()).unwrap();
        let sol = prob.solve(&Coefficient::constant(mesh.num_cells(), 1.0).unwrap()).unwrap();
        assert!((prob.effective_permeability(&sol).unwrap() - 1.0).abs() < 1e-8);
        for c in 0..mesh.num_cells() {
            let z = mesh.cell_centroid(c)[2];
            assert!((sol.p[c] - (1.0 - z)).abs() < 1e-8, "cell {c}: {} vs {}", sol.p[c], 1.0 - z);
        }
        let area = mesh.face_area(2);
        for j in 0..mesh.num_faces() {
            let (axis, _) = mesh.face_coords(j);
            let expect = if axis == 2 { area } else { 0.0 };
            assert!((sol.q[j] - expect).abs() < 1e-8);
        }
        assert!(prob.divergence_residual(&sol) <= 1e-8 * max_norm(&sol.q));
    }

    #[test]
    fn two_layers_in_series() {
        let mesh = unit(2, 8);
        let (k1, k2) = (1.0, 5.0);
        let k: Vec<f64> = (0..mesh.num_cells())
            .map(|c| if mesh.cell_centroid(c)[1] < 0.5 { k1 } else { k2 })
            .collect();
        let prob = DarcyProblem::new(&mesh, 1, DarcyOptions::default()).unwrap();
        let sol = prob.solve(&Coefficient::from_values(k).unwrap()).unwrap();
        let harmonic = 2.0 * k1 * k2 / (k1 + k2);
        assert!((prob.effective_permeability(&sol).unwrap() - harmonic).abs() < 1e-8);
    }

    #[test]
    fn scaling_by_constant() {
        let mesh = unit(2, 6);
        let prob = DarcyProblem::new(&mesh, 1, DarcyOptions::default()).unwrap();
        let base: Vec<f64> = (0..mesh.num_cells()).map(|c| 1.0 + ((c * 13) % 7) as f64).collect();
        let s1 = prob.solve(&Coefficient::from_values(base.clone()).unwrap()).unwrap();
        let c = 3.5;
        let s2 = prob
            .solve(&Coefficient::from_values(base.iter().map(|v| c * v).collect()).unwrap())
            .unwrap();
        let scale = max_norm(&s1.q);
        for (a, b) in s1.q.iter().zip(&s2.q) {
            assert!((c * a - b).abs() < 1e-8 * c * scale);
        }
        for (a, b) in s1.p.iter().zip(&s2.p) {
            assert!((a - b).abs() < 1e-8);
        }
        let k1 = prob.effective_permeability(&s1).unwrap();
        let k2 = prob.effective_permeability(&s2).unwrap();
        assert!((k2 - c * k1).abs() < 1e-8 * k2);
        assert!(k1 > 0.0);
    }

    #[test]
    fn preconditioner_changes_iterations_not_solution() {
        let mesh = unit(2, 8);
        let k: Vec<f64> = (0..mesh.num_cells()).map(|c| (((c * 7) % 5) as f64 - 2.0).exp()).collect();
        let coef = Coefficient::from_values(k).unwrap();
        let with = DarcyProblem::new(&mesh, 1, DarcyOptions::default()).unwrap().solve(&coef).unwrap();
        let opts = DarcyOptions {
            preconditioner: DarcyPreconditioner::None,
            ..Default::default()
        };
        let without = DarcyProblem::new(&mesh, 1, opts).unwrap().solve(&coef).unwrap();
        assert!(with.report.iterations < without.report.iterations);
        assert!(rel_l2(&with.q, &without.q) < 1e-7);
        assert!(rel_l2(&with.p, &without.p) < 1e-7);
    }

    #[test]
    fn refinement_invariance_layered() {
        let k_of = |y: f64| if y < 0.25 { 2.0 } else if y < 0.75 { 0.5 } else { 4.0 };
        let mut prev: Option<f64> = None;
        for n in [4, 8, 16] {
            let mesh = unit(2, n);
            let k = (0..mesh.num_cells()).map(|c| k_of(mesh.cell_centroid(c)[1])).collect();
            let prob = DarcyProblem::new(&mesh, 1, DarcyOptions::default()).unwrap();
            let keff = prob.effective_permeability(&prob.solve(&Coefficient::from_values(k).unwrap()).unwrap()).unwrap();
            if let Some(p) = prev {
                assert!((keff - p).abs() < 1e-8);
            }
            prev = Some(keff);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mesh = unit(2, 2);
        assert!(DarcyProblem::new(&mesh, 2, DarcyOptions::default()).is_err());
        let prob = DarcyProblem::new(&mesh, 0, DarcyOptions::default()).unwrap();
        assert!(prob.solve(&Coefficient::constant(3, 1.0).unwrap()).is_err());
    }
}
