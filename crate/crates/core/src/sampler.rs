//! Gaussian random fields with Matérn covariance from the mixed
//! reaction–diffusion SPDE, on single levels and as coupled coarse/fine pairs.
//!
//! On each level the block system
//!
//! ```text
//! [ M   Bᵀ   ] [u]   [  0   ]
//! [ B  -κ²W  ] [θ] = [ -g f ]      f = W^{1/2} ξ,  ξ ~ N(0, I)
//! ```
//!
//! is solved by eliminating θ: `A u = -g κ⁻² Bᵀ W⁻¹ f` with
//! `A = M + κ⁻² Bᵀ W⁻¹ B`, then `θ = κ⁻² W⁻¹ (B u + g f)`.
//! Fields live on the embedded (padded) mesh and are restricted to the
//! physical cells afterwards.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fem::AssembledLevel;
use crate::linalg::{cg_solve, norm2, PreconditionerKind, SolveReport, SolverOptions};
use crate::mesh::{embed_mesh_cells, refine_hierarchy, CartesianMesh, EmbeddingMap, MeshHierarchy};
use crate::rng::{draw_standard_normal, StreamKey};

/// Matérn parameters: smoothness ν, inverse length κ, marginal variance σ²
/// and spatial dimension d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub nu: f64,
    pub kappa: f64,
    pub sigma2: f64,
    pub dim: usize,
}

impl MaternParams {
    pub fn new(nu: f64, kappa: f64, sigma2: f64, dim: usize) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::invalid(format!("smoothness must be positive, got {nu}")));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!("marginal variance must be non-negative, got {sigma2}")));
        }
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        Ok(MaternParams { nu, kappa, sigma2, dim })
    }

    /// κ = √(8ν) / b for correlation length b.
    pub fn from_correlation_length(nu: f64, correlation_length: f64, sigma2: f64, dim: usize) -> Result<Self> {
        if !(correlation_length > 0.0) {
            return Err(Error::invalid("correlation length must be positive"));
        }
        Self::new(nu, (8.0 * nu).sqrt() / correlation_length, sigma2, dim)
    }

    pub fn correlation_length(&self) -> f64 {
        (8.0 * self.nu).sqrt() / self.kappa
    }

    /// α = ν + d/2
    pub fn alpha(&self) -> f64 {
        self.nu + self.dim as f64 / 2.0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Scaling g of the white noise giving unit marginal variance.
    pub fn scaling(&self) -> f64 {
        matern_scaling(self)
    }
}

/// g = (4π)^{d/4} κ^ν √(Γ(ν + d/2) / Γ(ν))
pub fn matern_scaling(params: &MaternParams) -> f64 {
    let d = params.dim as f64;
    let log_g = d / 4.0 * (4.0 * std::f64::consts::PI).ln()
        + params.nu * params.kappa.ln()
        + 0.5 * (ln_gamma(params.nu + d / 2.0) - ln_gamma(params.nu));
    log_g.exp()
}

/// Standard normal draws for one level of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub level: usize,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub level: usize,
    /// Cell values on the embedded mesh.
    pub theta: Vec<f64>,
    /// Cell values on the physical mesh.
    pub theta_phys: Vec<f64>,
    pub key: Option<StreamKey>,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub fine: FieldSample,
    pub coarse: FieldSample,
    /// δθ = θ_ℓ - P_θ θ_{ℓ+1} on the embedded fine mesh.
    pub correction: Vec<f64>,
}

/// Padding of the physical domain before solving.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Padding {
    None,
    /// One correlation length per side, rounded up to whole coarsest cells.
    #[default]
    CorrelationLength,
    /// Lengths per axis, rounded up to whole coarsest cells.
    Length(Vec<f64>),
    /// Whole coarsest cells per axis.
    Cells(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SamplerOptions {
    pub solver: SolverOptions,
    pub preconditioner: PreconditionerKind,
}

/// Solution of one level's mixed system before σ scaling.
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub report: SolveReport,
}

#[derive(Debug, Clone)]
pub struct SpdeSampler {
    params: MaternParams,
    hierarchy: MeshHierarchy,
    levels: Vec<AssembledLevel>,
    embeddings: Vec<EmbeddingMap>,
    options: SamplerOptions,
}

impl SpdeSampler {
    /// Build the embedded hierarchy over `physical_coarsest` refined to
    /// `num_levels` levels and assemble every level.
    pub fn new(
        physical_coarsest: &CartesianMesh,
        num_levels: usize,
        params: MaternParams,
        padding: &Padding,
        options: SamplerOptions,
    ) -> Result<Self> {
        let dim = physical_coarsest.dim();
        if params.dim != dim {
            return Err(Error::invalid(format!(
                "parameters are {}-dimensional but the mesh is {dim}-dimensional",
                params.dim
            )));
        }
        let pad_cells: Vec<usize> = match padding {
            Padding::None => vec![0; dim],
            Padding::CorrelationLength => (0..dim)
                .map(|a| physical_coarsest.cells_covering(a, params.correlation_length()))
                .collect(),
            Padding::Length(l) => {
                if l.len() != dim || l.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::invalid("padding lengths must be non-negative, one per axis"));
                }
                (0..dim).map(|a| physical_coarsest.cells_covering(a, l[a])).collect()
            }
            Padding::Cells(c) => {
                if c.len() != dim {
                    return Err(Error::invalid("padding cells need one entry per axis"));
                }
                c.clone()
            }
        };
        let (embedded_coarsest, coarse_map) = embed_mesh_cells(physical_coarsest, &pad_cells);
        let hierarchy = refine_hierarchy(&embedded_coarsest, num_levels)?;
        let mut embeddings = vec![coarse_map];
        for l in (0..hierarchy.coarsest_level()).rev() {
            let next = embeddings.last().unwrap().refined(hierarchy.level(l));
            embeddings.push(next);
        }
        embeddings.reverse();
        let levels = hierarchy
            .levels()
            .iter()
            .map(|m| AssembledLevel::new(m, params.kappa))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpdeSampler {
            params,
            hierarchy,
            levels,
            embeddings,
            options,
        })
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    pub fn options(&self) -> &SamplerOptions {
        &self.options
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn hierarchy(&self) -> &MeshHierarchy {
        &self.hierarchy
    }

    pub fn level(&self, l: usize) -> &AssembledLevel {
        &self.levels[l]
    }

    pub fn embedding(&self, l: usize) -> &EmbeddingMap {
        &self.embeddings[l]
    }

    pub fn physical_mesh(&self, l: usize) -> &CartesianMesh {
        self.embeddings[l].physical()
    }

    fn check_level(&self, l: usize) -> Result<()> {
        if l >= self.levels.len() {
            return Err(Error::invalid(format!(
                "level {l} out of range (hierarchy has {} levels)",
                self.levels.len()
            )));
        }
        Ok(())
    }

    fn check_noise(&self, l: usize, xi: &[f64]) -> Result<()> {
        self.check_level(l)?;
        let n = self.levels[l].mesh().num_cells();
        if xi.len() != n {
            return Err(Error::invalid(format!("noise has {} entries, level {l} has {n} cells", xi.len())));
        }
        Ok(())
    }

    /// ξ for level `key.level` of sample `key.sample`.
    pub fn draw_noise(&self, key: StreamKey) -> Result<NoiseVector> {
        let l = key.level as usize;
        self.check_level(l)?;
        Ok(NoiseVector {
            level: l,
            xi: draw_standard_normal(key, self.levels[l].mesh().num_cells()),
        })
    }

    /// f = W^{1/2} ξ
    pub fn white_noise_rhs(&self, l: usize, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_noise(l, xi)?;
        Ok(self.levels[l].w().iter().zip(xi).map(|(w, x)| w.sqrt() * x).collect())
    }

    /// Solve `B u - κ² W θ = -s` together with `M u + Bᵀ θ = 0`, where `s`
    /// is the (already scaled) source; `s = g f` for the SPDE.
    pub fn solve_mixed(&self, l: usize, source: &[f64], u0: Option<&[f64]>) -> Result<LevelSolution> {
        self.check_noise(l, source)?;
        let level = &self.levels[l];
        let k2inv = level.kappa().powi(-2);
        let w = level.w();
        let scaled: Vec<f64> = source.iter().zip(w).map(|(s, w)| k2inv * s / w).collect();
        let mut rhs = level.b().mul_vec_transpose(&scaled);
        for (r, &fixed) in rhs.iter_mut().zip(level.essential()) {
            if fixed {
                *r = 0.0;
            } else {
                *r = -*r;
            }
        }
        // tighten so the block-system residual also meets rtol·‖source‖
        let mut opts = self.options.solver;
        let rn = norm2(&rhs);
        if rn > 0.0 {
            opts.rtol *= (norm2(source) / rn).min(1.0);
        }
        let precond = self.options.preconditioner.build(level.a());
        let (u, report) = cg_solve(level.a(), &rhs, u0, &opts, precond.as_ref());
        if !report.converged {
            return Err(Error::SolverFailure {
                context: "SPDE Schur system",
                level: Some(l),
                report,
            });
        }
        let bu = level.b().mul_vec(&u);
        let theta = bu
            .iter()
            .zip(source)
            .zip(w)
            .map(|((bu, s), w)| k2inv * (bu + s) / w)
            .collect();
        Ok(LevelSolution { u, theta, report })
    }

    fn finish(&self, l: usize, sol: LevelSolution, key: Option<StreamKey>) -> FieldSample {
        let sigma = self.params.sigma();
        let theta: Vec<f64> = sol.theta.iter().map(|t| sigma * t).collect();
        FieldSample {
            level: l,
            theta_phys: self.embeddings[l].restrict(&theta),
            theta,
            key,
            report: sol.report,
        }
    }

    fn spde_source(&self, l: usize, xi: &[f64]) -> Result<Vec<f64>> {
        let g = self.params.scaling();
        Ok(self.white_noise_rhs(l, xi)?.into_iter().map(|f| g * f).collect())
    }

    /// Field on level `l` driven by ξ.
    pub fn sample_single_level(&self, l: usize, xi: &[f64]) -> Result<FieldSample> {
        let source = self.spde_source(l, xi)?;
        let sol = self.solve_mixed(l, &source, None)?;
        Ok(self.finish(l, sol, None))
    }

    /// Field on level `key.level` with noise drawn from `key`.
    pub fn sample(&self, key: StreamKey) -> Result<FieldSample> {
        let noise = self.draw_noise(key)?;
        let mut s = self.sample_single_level(noise.level, &noise.xi)?;
        s.key = Some(key);
        Ok(s)
    }

    /// ξ_{ℓ+1} = W_{ℓ+1}^{-1/2} P_θᵀ W_ℓ^{1/2} ξ_ℓ
    pub fn restrict_noise(&self, xi: &[f64], l: usize) -> Result<Vec<f64>> {
        self.check_noise(l, xi)?;
        if l + 1 >= self.levels.len() {
            return Err(Error::invalid(format!("level {l} has no coarser level")));
        }
        let f = self.white_noise_rhs(l, xi)?;
        let fc = self.hierarchy.p_theta(l).mul_vec_transpose(&f);
        Ok(fc
            .iter()
            .zip(self.levels[l + 1].w())
            .map(|(f, w)| f / w.sqrt())
            .collect())
    }

    /// Coupled fields on levels ℓ and ℓ+1 from one fine noise vector. The
    /// coarse solve runs first; its prolongated flux seeds the fine solve.
    pub fn sample_pair(&self, l: usize, xi: &[f64]) -> Result<PairSample> {
        let xi_c = self.restrict_noise(xi, l)?;
        let coarse_src = self.spde_source(l + 1, &xi_c)?;
        let coarse = self.solve_mixed(l + 1, &coarse_src, None)?;
        let u0 = self.hierarchy.p_u(l).mul_vec(&coarse.u);
        let fine_src = self.spde_source(l, xi)?;
        let fine = self.solve_mixed(l, &fine_src, Some(&u0))?;
        let fine = self.finish(l, fine, None);
        let coarse = self.finish(l + 1, coarse, None);
        let prolonged = self.hierarchy.p_theta(l).mul_vec(&coarse.theta);
        let correction = fine.theta.iter().zip(&prolonged).map(|(a, b)| a - b).collect();
        Ok(PairSample {
            fine,
            coarse,
            correction,
        })
    }

    /// Pair for sample `key.sample`, fine level `key.level`.
    pub fn sample_pair_keyed(&self, key: StreamKey) -> Result<PairSample> {
        let noise = self.draw_noise(key)?;
        let mut pair = self.sample_pair(noise.level, &noise.xi)?;
        pair.fine.key = Some(key);
        pair.coarse.key = Some(key);
        Ok(pair)
    }

    /// Smoother field from `k` further solves of (κ² - Δ)θᵢ₊₁ = θᵢ starting
    /// from the SPDE solution. `params.nu` must equal 2k+1 in 2D or 2k+½ in 3D
    /// so that the initial scaling yields unit marginal variance.
    pub fn sample_smoother(&self, l: usize, xi: &[f64], k: usize) -> Result<FieldSample> {
        if k == 0 {
            return Err(Error::invalid("the recursion count must be at least 1"));
        }
        let expected = match self.params.dim {
            2 => 2.0 * k as f64 + 1.0,
            _ => 2.0 * k as f64 + 0.5,
        };
        if (self.params.nu - expected).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "{} recursions in {}D require nu = {expected}, got {}",
                k, self.params.dim, self.params.nu
            )));
        }
        let source = self.spde_source(l, xi)?;
        let mut sol = self.solve_mixed(l, &source, None)?;
        let mut iterations = sol.report.iterations;
        for _ in 0..k {
            let src: Vec<f64> = sol.theta.iter().zip(self.levels[l].w()).map(|(t, w)| t * w).collect();
            sol = self.solve_mixed(l, &src, None)?;
            iterations += sol.report.iterations;
        }
        sol.report.iterations = iterations;
        Ok(self.finish(l, sol, None))
    }

    /// Euclidean norm of the block-system residual for an unscaled
    /// solution (u, θ) and source s.
    pub fn block_residual(&self, l: usize, u: &[f64], theta: &[f64], source: &[f64]) -> f64 {
        let level = &self.levels[l];
        let mut r1 = level.m().mul_vec(u);
        let btt = level.b().mul_vec_transpose(theta);
        for ((r, b), &fixed) in r1.iter_mut().zip(&btt).zip(level.essential()) {
            *r = if fixed { 0.0 } else { *r + b };
        }
        let k2 = level.kappa().powi(2);
        let bu = level.b().mul_vec(u);
        let r2: Vec<f64> = bu
            .iter()
            .zip(theta)
            .zip(level.w())
            .zip(source)
            .map(|(((bu, t), w), s)| bu - k2 * w * t + s)
            .collect();
        (norm2(&r1).powi(2) + norm2(&r2).powi(2)).sqrt()
    }
}
