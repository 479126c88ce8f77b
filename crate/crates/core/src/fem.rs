//! Mixed finite-element operators on Cartesian meshes: lowest-order face
//! elements (flux dofs) paired with piecewise constants.
//!
//! Every face basis function carries unit flux in the positive direction of
//! its normal axis, so the divergence matrix has entries ±1 and the
//! piecewise-constant mass matrix is the diagonal of cell volumes. All local
//! integrals are closed-form.

use crate::error::{Error, Result};
use crate::linalg::{cg_solve, CsrMatrix, Jacobi, SolveReport, SolverOptions};
use crate::mesh::{CartesianMesh, Side};

/// Diagonal of the piecewise-constant mass matrix (cell volumes).
pub fn assemble_p0_mass(mesh: &CartesianMesh) -> Vec<f64> {
    vec![mesh.cell_volume(); mesh.num_cells()]
}

/// Divergence matrix (cells × faces): `(B u)_i` is the net outward flux of
/// cell `i`.
pub fn assemble_divergence(mesh: &CartesianMesh) -> CsrMatrix {
    let mut t = Vec::with_capacity(mesh.num_cells() * 2 * mesh.dim());
    for c in 0..mesh.num_cells() {
        for axis in 0..mesh.dim() {
            t.push((c, mesh.cell_face(c, axis, Side::Low), -1.0));
            t.push((c, mesh.cell_face(c, axis, Side::High), 1.0));
        }
    }
    CsrMatrix::from_triplets(mesh.num_cells(), mesh.num_faces(), &t)
}

/// Face-element mass matrix weighted by a positive per-cell coefficient
/// (1 for the sampler, 1/k for Darcy).
///
/// On a cell of size h₁×…×h_d the two faces normal to axis `a` couple
/// through `c·h_a/(3A_a)` on the diagonal and `c·h_a/(6A_a)` off it, where
/// `A_a` is the face area; faces of different axes are L²-orthogonal.
pub fn assemble_rt_mass(mesh: &CartesianMesh, cell_coefficient: &[f64]) -> Result<CsrMatrix> {
    if cell_coefficient.len() != mesh.num_cells() {
        return Err(Error::invalid(format!(
            "coefficient has {} entries for {} cells",
            cell_coefficient.len(),
            mesh.num_cells()
        )));
    }
    if let Some((i, c)) = cell_coefficient
        .iter()
        .enumerate()
        .find(|(_, c)| !(**c > 0.0) || !c.is_finite())
    {
        return Err(Error::invalid(format!("mass coefficient must be positive, cell {i} has {c}")));
    }
    let local: Vec<(f64, f64)> = (0..mesh.dim())
        .map(|a| {
            let r = mesh.cell_sizes()[a] / mesh.face_area(a);
            (r / 3.0, r / 6.0)
        })
        .collect();
    let mut t = Vec::with_capacity(mesh.num_cells() * 4 * mesh.dim());
    for (cell, &coef) in cell_coefficient.iter().enumerate() {
        for (axis, &(diag, off)) in local.iter().enumerate() {
            let lo = mesh.cell_face(cell, axis, Side::Low);
            let hi = mesh.cell_face(cell, axis, Side::High);
            t.push((lo, lo, coef * diag));
            t.push((hi, hi, coef * diag));
            t.push((lo, hi, coef * off));
            t.push((hi, lo, coef * off));
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_faces(), mesh.num_faces(), &t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    /// u·n = 0, imposed by eliminating the face dof.
    EssentialZeroNormalFlux,
    /// Prescribed pressure, entering the flux equation's right-hand side.
    DirichletPressure(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub kind: BoundaryKind,
    pub region: Vec<usize>,
}

/// Mask of faces with u·n = 0 imposed.
pub fn essential_mask(num_faces: usize, conditions: &[BoundaryCondition]) -> Vec<bool> {
    let mut mask = vec![false; num_faces];
    for bc in conditions {
        if bc.kind == BoundaryKind::EssentialZeroNormalFlux {
            for &f in &bc.region {
                mask[f] = true;
            }
        }
    }
    mask
}

/// Operators of one level of the sampler's mixed system.
#[derive(Debug, Clone)]
pub struct AssembledLevel {
    mesh: CartesianMesh,
    kappa: f64,
    /// Face mass matrix with essential dofs eliminated.
    m: CsrMatrix,
    /// Cell volumes.
    w: Vec<f64>,
    /// Divergence with essential columns zeroed.
    b: CsrMatrix,
    /// M + κ⁻² Bᵀ W⁻¹ B with essential dofs eliminated.
    a: CsrMatrix,
    essential: Vec<bool>,
}

impl AssembledLevel {
    /// Assemble the SPDE operators with u·n = 0 on the whole boundary.
    pub fn new(mesh: &CartesianMesh, kappa: f64) -> Result<Self> {
        let bc = BoundaryCondition {
            kind: BoundaryKind::EssentialZeroNormalFlux,
            region: mesh.all_boundary_faces(),
        };
        Self::with_conditions(mesh, kappa, &[bc])
    }

    pub fn with_conditions(mesh: &CartesianMesh, kappa: f64, conditions: &[BoundaryCondition]) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
        }
        let essential = essential_mask(mesh.num_faces(), conditions);
        let w = assemble_p0_mass(mesh);
        let m_raw = assemble_rt_mass(mesh, &vec![1.0; mesh.num_cells()])?;
        let b_raw = assemble_divergence(mesh);
        let a = assemble_spde_schur(&m_raw, &b_raw, &w, kappa, &essential)?;
        Ok(AssembledLevel {
            mesh: mesh.clone(),
            kappa,
            m: m_raw.eliminate_symmetric(&essential),
            b: b_raw.zero_cols(&essential),
            w,
            a,
            essential,
        })
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn m(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn essential(&self) -> &[bool] {
        &self.essential
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_faces() + self.mesh.num_cells()
    }
}

/// A = M + κ⁻² Bᵀ W⁻¹ B, then symmetric elimination of `essential`.
pub fn assemble_spde_schur(
    m: &CsrMatrix,
    b: &CsrMatrix,
    w: &[f64],
    kappa: f64,
    essential: &[bool],
) -> Result<CsrMatrix> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
    }
    let w_inv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
    let btwb = b.transpose().matmul(&b.scale_rows(&w_inv));
    let a = m.add_scaled(1.0, &btwb, kappa.powi(-2));
    Ok(a.eliminate_symmetric(essential))
}

/// Discrete gradient ∇ₕθ = -M⁻¹Bᵀθ on the faces with free normal trace.
pub fn discrete_gradient_apply(
    level: &AssembledLevel,
    theta: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    if theta.len() != level.mesh.num_cells() {
        return Err(Error::invalid("theta length does not match the cell count"));
    }
    let mut rhs = level.b.mul_vec_transpose(theta);
    for (r, &fixed) in rhs.iter_mut().zip(&level.essential) {
        *r = if fixed { 0.0 } else { -*r };
    }
    let (g, report) = cg_solve(&level.m, &rhs, None, opts, &Jacobi::new(&level.m));
    if !report.converged {
        return Err(Error::SolverFailure {
            context: "discrete gradient",
            level: None,
            report,
        });
    }
    Ok((g, report))
}
