//! Monte Carlo and multilevel Monte Carlo estimation of E[Q].
//!
//! Levels follow the hierarchy indexing: ℓ = 0 is the finest, ℓ = L the
//! coarsest. `Y_ℓ = Q_ℓ - Q_{ℓ+1}` for ℓ < L and `Y_L = Q_L`, so the
//! estimator `Σ_ℓ mean(Y_ℓ)` telescopes to an estimate of E[Q_0].
//!
//! Sample `i` of level `ℓ` always uses `StreamKey::new(seed, i, ℓ)`. Samples
//! are evaluated in parallel, collected in index order and folded
//! sequentially, so results do not depend on the thread count.

use std::time::Instant;

use rayon::prelude::*;

use crate::darcy::{build_coefficient, Coefficient, DarcyOptions, DarcyProblem, DarcySolution};
use crate::error::{Error, Result};
use crate::mesh::cell_prolongation;
use crate::rng::StreamKey;
use crate::sampler::SpdeSampler;
use crate::stats::RunningStats;

/// Quantity-of-interest values for one sample of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelEval {
    pub q_fine: f64,
    /// Q on the next coarser level from the same noise; `None` on the
    /// coarsest level.
    pub q_coarse: Option<f64>,
}

impl LevelEval {
    pub fn y(&self) -> f64 {
        self.q_fine - self.q_coarse.unwrap_or(0.0)
    }
}

/// Map from noise to quantity of interest on a level hierarchy.
pub trait QoiPipeline: Sync {
    fn num_levels(&self) -> usize;

    /// Unknowns solved for one Q on level `level`.
    fn dofs(&self, level: usize) -> usize;

    /// Coupled (Q_ℓ, Q_{ℓ+1}) for ℓ < L, Q_L alone on the coarsest level.
    fn evaluate(&self, key: StreamKey) -> Result<LevelEval>;

    /// Q_ℓ without the coupled coarse partner.
    fn evaluate_single(&self, key: StreamKey) -> Result<f64>;
}

/// How per-sample cost C_ℓ is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// Unknowns solved per sample times a fixed cost per unknown (seconds).
    /// Deterministic.
    Dofs { seconds_per_dof: f64 },
    /// Measured wall time per sample. Not reproducible across runs.
    Wall,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::Dofs { seconds_per_dof: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcConfig {
    /// Target mean square error ε².
    pub eps2: f64,
    /// Share of ε² given to the sampling variance.
    pub split: f64,
    pub pilot_samples: usize,
    pub min_samples: usize,
    /// Abort when any level asks for more samples than this.
    pub max_samples: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub cost_model: CostModel,
    /// Failed samples tolerated before aborting.
    pub failure_budget: usize,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        MlmcConfig {
            eps2: 1e-3,
            split: 0.5,
            pilot_samples: 50,
            min_samples: 2,
            max_samples: 1_000_000,
            max_rounds: 20,
            seed: 0,
            cost_model: CostModel::default(),
            failure_budget: 0,
        }
    }
}

impl MlmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps2 > 0.0) || !self.eps2.is_finite() {
            return Err(Error::invalid(format!("eps2 must be positive, got {}", self.eps2)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::invalid(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if self.min_samples < 2 || self.pilot_samples < self.min_samples {
            return Err(Error::invalid("need pilot_samples >= min_samples >= 2"));
        }
        if self.max_samples < self.pilot_samples {
            return Err(Error::invalid("max_samples is below pilot_samples"));
        }
        if let CostModel::Dofs { seconds_per_dof } = self.cost_model {
            if !(seconds_per_dof > 0.0) {
                return Err(Error::invalid("seconds_per_dof must be positive"));
            }
        }
        Ok(())
    }
}

/// Running statistics of one level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    pub dofs: usize,
    pub y: RunningStats,
    pub q: RunningStats,
    /// Summed modelled cost of all samples, seconds.
    pub cost_total: f64,
    /// Summed measured evaluation time, seconds.
    pub wall_total: f64,
    pub failures: usize,
}

impl LevelStats {
    pub fn new(level: usize, dofs: usize) -> Self {
        LevelStats {
            level,
            dofs,
            ..Default::default()
        }
    }

    pub fn samples(&self) -> usize {
        self.y.count() as usize
    }

    /// Mean cost per sample C_ℓ.
    pub fn cost_per_sample(&self) -> f64 {
        if self.samples() == 0 {
            0.0
        } else {
            self.cost_total / self.samples() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcResult {
    /// Σ_ℓ mean(Y_ℓ)
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    /// Σ_ℓ V_ℓ / N_ℓ
    pub variance_bound: f64,
    /// |mean(Y_0)|, compared against the bias budget.
    pub bias_proxy: f64,
    /// (1 - split) ε²
    pub bias_budget: f64,
    pub total_cost: f64,
    pub total_wall: f64,
    pub rounds: usize,
    pub converged: bool,
}

impl MlmcResult {
    pub fn standard_error(&self) -> f64 {
        self.variance_bound.sqrt()
    }

    pub fn total_samples(&self) -> usize {
        self.levels.iter().map(LevelStats::samples).sum()
    }
}

fn sample_cost(pipeline: &dyn QoiPipeline, level: usize, coupled: bool, model: CostModel, wall: f64) -> f64 {
    match model {
        CostModel::Dofs { seconds_per_dof } => {
            let mut dofs = pipeline.dofs(level);
            if coupled {
                dofs += pipeline.dofs(level + 1);
            }
            dofs as f64 * seconds_per_dof
        }
        CostModel::Wall => wall,
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

/// Fold outcomes in index order, aborting once failures exceed the budget.
fn absorb(
    stats: &mut LevelStats,
    outcomes: Vec<(Result<LevelEval>, f64)>,
    cost: impl Fn(f64) -> f64,
    budget: usize,
) -> Result<()> {
    for (res, wall) in outcomes {
        stats.wall_total += wall;
        match res {
            Ok(e) => {
                stats.y.push(e.y());
                stats.q.push(e.q_fine);
                stats.cost_total += cost(wall);
            }
            Err(err) => {
                stats.failures += 1;
                if stats.failures > budget {
                    return Err(err.at_level(stats.level));
                }
            }
        }
    }
    Ok(())
}

/// Add samples with indices `range` on `stats.level` (the Y_ℓ estimator).
pub fn extend_level(
    stats: &mut LevelStats,
    range: std::ops::Range<u64>,
    pipeline: &dyn QoiPipeline,
    seed: u64,
    cost_model: CostModel,
    failure_budget: usize,
) -> Result<()> {
    let l = stats.level;
    let coupled = l + 1 < pipeline.num_levels();
    let outcomes: Vec<_> = range
        .into_par_iter()
        .map(|i| timed(|| pipeline.evaluate(StreamKey::new(seed, i, l as u32))))
        .collect();
    absorb(
        stats,
        outcomes,
        |w| sample_cost(pipeline, l, coupled, cost_model, w),
        failure_budget,
    )
}

/// Y_ℓ statistics from samples 0..n.
pub fn estimate_y(level: usize, n: usize, pipeline: &dyn QoiPipeline, seed: u64, cost_model: CostModel) -> Result<LevelStats> {
    if level >= pipeline.num_levels() {
        return Err(Error::invalid(format!("level {level} out of range")));
    }
    let mut stats = LevelStats::new(level, pipeline.dofs(level));
    extend_level(&mut stats, 0..n as u64, pipeline, seed, cost_model, 0)?;
    Ok(stats)
}

/// Plain Monte Carlo for Q on one level. `y` and `q` of the returned stats
/// coincide.
pub fn mc_estimate(level: usize, n: usize, pipeline: &dyn QoiPipeline, seed: u64, cost_model: CostModel) -> Result<LevelStats> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if level >= pipeline.num_levels() {
        return Err(Error::invalid(format!("level {level} out of range")));
    }
    let outcomes: Vec<_> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            timed(|| {
                pipeline.evaluate_single(StreamKey::new(seed, i, level as u32)).map(|q| LevelEval {
                    q_fine: q,
                    q_coarse: None,
                })
            })
        })
        .collect();
    let mut stats = LevelStats::new(level, pipeline.dofs(level));
    absorb(&mut stats, outcomes, |w| sample_cost(pipeline, level, false, cost_model, w), 0)?;
    Ok(stats)
}

/// N_ℓ = ⌈(split·ε²)⁻¹ √(V_ℓ/C_ℓ) Σ_j √(V_j C_j)⌉, floored at `min_samples`.
/// Returned as reals before the ceiling so callers can inspect the scaling.
pub fn optimal_samples(variances: &[f64], costs: &[f64], eps2: f64, split: f64) -> Result<Vec<f64>> {
    if variances.len() != costs.len() {
        return Err(Error::invalid("variance and cost lists differ in length"));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) || costs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::invalid("variances must be >= 0 and costs > 0"));
    }
    let total: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    Ok(variances
        .iter()
        .zip(costs)
        .map(|(v, c)| (v / c).sqrt() * total / (split * eps2))
        .collect())
}

pub fn allocate_samples(variances: &[f64], costs: &[f64], eps2: f64, split: f64, min_samples: usize) -> Result<Vec<usize>> {
    Ok(optimal_samples(variances, costs, eps2, split)?
        .into_iter()
        .map(|n| (n.ceil() as usize).max(min_samples))
        .collect())
}

/// Pilot, allocate, top up; repeat until no level asks for more samples.
pub fn mlmc_run(config: &MlmcConfig, pipeline: &dyn QoiPipeline) -> Result<MlmcResult> {
    config.validate()?;
    let nl = pipeline.num_levels();
    if nl < 2 {
        return Err(Error::invalid("multilevel estimation needs at least two levels"));
    }
    let mut levels: Vec<LevelStats> = (0..nl).map(|l| LevelStats::new(l, pipeline.dofs(l))).collect();
    let mut targets = vec![config.pilot_samples; nl];
    let mut rounds = 0;
    let mut converged = false;
    while rounds < config.max_rounds {
        rounds += 1;
        for (stats, &target) in levels.iter_mut().zip(&targets) {
            let have = stats.samples() + stats.failures;
            if target > have {
                extend_level(
                    stats,
                    have as u64..target as u64,
                    pipeline,
                    config.seed,
                    config.cost_model,
                    config.failure_budget,
                )?;
            }
        }
        let variances: Vec<f64> = levels.iter().map(|s| s.y.variance()).collect();
        let costs: Vec<f64> = levels.iter().map(|s| s.cost_per_sample().max(f64::MIN_POSITIVE)).collect();
        let wanted = allocate_samples(&variances, &costs, config.eps2, config.split, config.min_samples)?;
        for (l, &n) in wanted.iter().enumerate() {
            if n > config.max_samples {
                return Err(Error::AllocationDiverged {
                    level: l,
                    requested: n,
                    cap: config.max_samples,
                });
            }
        }
        if wanted.iter().zip(&levels).all(|(&n, s)| n <= s.samples()) {
            converged = true;
            break;
        }
        targets = wanted
            .iter()
            .zip(&levels)
            .map(|(&n, s)| n.max(s.samples() + s.failures))
            .collect();
    }
    let estimate = levels.iter().map(|s| s.y.mean()).sum();
    let variance_bound = levels.iter().map(|s| s.y.mean_variance()).sum();
    Ok(MlmcResult {
        estimate,
        variance_bound,
        bias_proxy: levels[0].y.mean().abs(),
        bias_budget: (1.0 - config.split) * config.eps2,
        total_cost: levels.iter().map(|s| s.cost_total).sum(),
        total_wall: levels.iter().map(|s| s.wall_total).sum(),
        levels,
        rounds,
        converged,
    })
}

/// Effective permeability of k = exp(m + θ) with θ from the SPDE sampler.
pub struct LognormalDarcyPipeline {
    sampler: SpdeSampler,
    problems: Vec<DarcyProblem>,
    /// Mean log permeability per level on the physical mesh.
    mean_log: Option<Vec<Vec<f64>>>,
}

impl LognormalDarcyPipeline {
    /// `mean_log_coarsest` lives on the coarsest physical mesh and is
    /// injected into every finer level.
    pub fn new(
        sampler: SpdeSampler,
        flow_axis: usize,
        options: DarcyOptions,
        mean_log_coarsest: Option<Vec<f64>>,
    ) -> Result<Self> {
        let nl = sampler.num_levels();
        let problems = (0..nl)
            .map(|l| DarcyProblem::new(sampler.physical_mesh(l), flow_axis, options))
            .collect::<Result<Vec<_>>>()?;
        let mean_log = match mean_log_coarsest {
            None => None,
            Some(m) => {
                let coarsest = sampler.physical_mesh(nl - 1);
                if m.len() != coarsest.num_cells() {
                    return Err(Error::invalid(format!(
                        "mean log field has {} entries, coarsest mesh has {} cells",
                        m.len(),
                        coarsest.num_cells()
                    )));
                }
                let mut fields = vec![m];
                for l in (0..nl - 1).rev() {
                    let p = cell_prolongation(sampler.physical_mesh(l), sampler.physical_mesh(l + 1));
                    let next = p.mul_vec(fields.last().unwrap());
                    fields.push(next);
                }
                fields.reverse();
                Some(fields)
            }
        };
        Ok(LognormalDarcyPipeline {
            sampler,
            problems,
            mean_log,
        })
    }

    pub fn sampler(&self) -> &SpdeSampler {
        &self.sampler
    }

    pub fn problem(&self, level: usize) -> &DarcyProblem {
        &self.problems[level]
    }

    /// Mean log permeability on level `l`, if any.
    pub fn mean_log_field(&self, l: usize) -> Option<&[f64]> {
        self.mean_log.as_ref().map(|f| f[l].as_slice())
    }

    /// Darcy solution for a physical field on level `l`.
    pub fn solve(&self, l: usize, theta_phys: &[f64]) -> Result<(Coefficient, DarcySolution)> {
        let k = build_coefficient(theta_phys, self.mean_log_field(l))?;
        let sol = self.problems[l].solve(&k).map_err(|e| e.at_level(l))?;
        Ok((k, sol))
    }

    /// Q for a physical field on level `l`.
    pub fn qoi(&self, l: usize, theta_phys: &[f64]) -> Result<f64> {
        let (_, sol) = self.solve(l, theta_phys)?;
        self.problems[l].effective_permeability(&sol)
    }
}

impl QoiPipeline for LognormalDarcyPipeline {
    fn num_levels(&self) -> usize {
        self.sampler.num_levels()
    }

    fn dofs(&self, level: usize) -> usize {
        self.sampler.level(level).num_dofs() + self.problems[level].num_dofs()
    }

    fn evaluate(&self, key: StreamKey) -> Result<LevelEval> {
        let l = key.level as usize;
        if l + 1 < self.num_levels() {
            let pair = self.sampler.sample_pair_keyed(key)?;
            Ok(LevelEval {
                q_fine: self.qoi(l, &pair.fine.theta_phys)?,
                q_coarse: Some(self.qoi(l + 1, &pair.coarse.theta_phys)?),
            })
        } else {
            self.evaluate_single(key).map(|q| LevelEval {
                q_fine: q,
                q_coarse: None,
            })
        }
    }

    fn evaluate_single(&self, key: StreamKey) -> Result<f64> {
        let field = self.sampler.sample(key)?;
        self.qoi(key.level as usize, &field.theta_phys)
    }
}
