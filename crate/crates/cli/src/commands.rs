use rayon::prelude::*;
use spde_mlmc::fem::assemble_p0_mass;
use spde_mlmc::kl::{
    assemble_covariance_matrix, centroid_covariance, empirical_covariance, kl_decompose, kl_sample,
    relative_frobenius_error, CovarianceModel,
};
use spde_mlmc::mesh::CartesianMesh;
use spde_mlmc::mlmc::{mc_estimate, mlmc_run, LevelStats, LognormalDarcyPipeline, MlmcResult, QoiPipeline};
use spde_mlmc::rng::{draw_standard_normal, StreamKey};
use spde_mlmc::sampler::{FieldSample, SpdeSampler};
use spde_mlmc::stats::FieldStats;
use spde_mlmc::Error as CoreError;

use crate::config::{Config, DumpFormat};
use crate::error::CliError;
use crate::output::{fmt_f64, header, OutputDir};
use crate::spe10;

/// Samples evaluated in parallel per batch before being folded in order.
const BATCH: usize = 256;

/// Stream level tag for KL draws, disjoint from every mesh level.
pub const KL_STREAM: u32 = u32::MAX;

/// Seed offset for the single-level reference run of `mlmc`.
pub const REFERENCE_SEED_XOR: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub out: OutputDir,
}

fn build_sampler(cfg: &Config) -> Result<SpdeSampler, CliError> {
    Ok(SpdeSampler::new(
        &cfg.coarsest_mesh()?,
        cfg.mesh.levels,
        cfg.matern()?,
        &cfg.padding(),
        cfg.sampler_options(),
    )?)
}

fn mean_log_field(cfg: &Config) -> Result<Option<Option<Vec<f64>>>, CliError> {
    let Some(path) = &cfg.darcy.spe10_path else {
        return Ok(Some(None));
    };
    match spe10::load_log_permeability(path)? {
        None => {
            eprintln!("SPE10 file {} not found; skipping", path.display());
            Ok(None)
        }
        Some(m) => {
            if cfg.mesh.dim != 2 || cfg.mesh.cells != [spe10::NX, spe10::NY] {
                return Err(CliError::Config(format!(
                    "the SPE10 mean field needs a 2-d coarsest mesh of {}x{} cells",
                    spe10::NX,
                    spe10::NY
                )));
            }
            Ok(Some(Some(m)))
        }
    }
}

fn coord_columns(mesh: &CartesianMesh) -> Vec<&'static str> {
    ["x", "y", "z"][..mesh.dim()].to_vec()
}

fn cell_row(mesh: &CartesianMesh, c: usize, values: &[f64]) -> Vec<String> {
    let x = mesh.cell_centroid(c);
    let mut row = vec![c.to_string()];
    row.extend(x[..mesh.dim()].iter().map(|v| fmt_f64(*v)));
    row.extend(values.iter().map(|v| fmt_f64(*v)));
    row
}

/// Evaluate `f(i)` for `i in 0..n` in parallel batches, folding results in
/// index order.
fn for_each_ordered<T: Send>(
    n: usize,
    f: impl Fn(u64) -> Result<T, CoreError> + Sync,
    mut sink: impl FnMut(u64, T) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut start = 0;
    while start < n {
        let end = (start + BATCH).min(n);
        let batch: Vec<_> = (start as u64..end as u64).into_par_iter().map(&f).collect();
        for (i, r) in (start as u64..).zip(batch) {
            sink(i, r?)?;
        }
        start = end;
    }
    Ok(())
}

pub fn sample(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let s = &cfg.sampling;
    let sampler = build_sampler(cfg)?;
    let level = s.level;
    let write = |i: u64, role: &str, f: &FieldSample| -> Result<(), CliError> {
        let mesh = sampler.physical_mesh(f.level);
        let h = header(
            "sample",
            cfg,
            ctx.seed,
            &[
                ("sample", i.to_string()),
                ("level", f.level.to_string()),
                ("role", role.into()),
                ("cells", format!("{:?}", mesh.cell_counts())),
                ("iterations", f.report.iterations.to_string()),
            ],
        );
        let stem = format!("field_{i:05}_l{}", f.level);
        match s.format {
            DumpFormat::Csv => {
                let mut cols = vec!["cell"];
                cols.extend(coord_columns(mesh));
                cols.push("theta");
                let rows: Vec<_> = (0..mesh.num_cells()).map(|c| cell_row(mesh, c, &[f.theta_phys[c]])).collect();
                ctx.out.write_csv(&format!("{stem}.csv"), &h, &cols, &rows)?;
            }
            DumpFormat::Binary => {
                ctx.out.write_binary(&format!("{stem}.bin"), &h, &f.theta_phys)?;
            }
        }
        Ok(())
    };
    for_each_ordered(
        s.samples,
        |i| {
            let key = StreamKey::new(ctx.seed, i, level as u32);
            if s.pair {
                sampler.sample_pair_keyed(key).map(|p| (p.fine, Some(p.coarse)))
            } else {
                sampler.sample(key).map(|f| (f, None))
            }
        },
        |i, (fine, coarse)| {
            match &coarse {
                Some(c) => {
                    write(i, "fine", &fine)?;
                    write(i, "coarse", c)?;
                }
                None => write(i, "single", &fine)?,
            }
            Ok(())
        },
    )?;
    println!(
        "wrote {} sample(s) on level {level}{} to {}",
        s.samples,
        if s.pair { " with coupled coarse fields" } else { "" },
        ctx.out.path("").display()
    );
    Ok(())
}

fn distance_to_boundary(mesh: &CartesianMesh, c: usize) -> f64 {
    let x = mesh.cell_centroid(c);
    let ext = mesh.extents();
    (0..mesh.dim())
        .map(|a| (x[a] - mesh.origin()[a]).min(mesh.origin()[a] + ext[a] - x[a]))
        .fold(f64::INFINITY, f64::min)
}

fn is_boundary_adjacent(mesh: &CartesianMesh, c: usize) -> bool {
    let ijk = mesh.cell_coords(c);
    (0..mesh.dim()).any(|a| ijk[a] == 0 || ijk[a] + 1 == mesh.cell_counts()[a])
}

pub fn variance_map(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let n = cfg.sampling.samples;
    if n < 2 {
        return Err(CoreError::InsufficientSamples { needed: 2, got: n }.into());
    }
    let sampler = build_sampler(cfg)?;
    let level = cfg.sampling.level;
    let mesh = sampler.physical_mesh(level).clone();
    let mut stats = FieldStats::new(mesh.num_cells());
    for_each_ordered(
        n,
        |i| sampler.sample(StreamKey::new(ctx.seed, i, level as u32)).map(|f| f.theta_phys),
        |_, theta| {
            stats.push(&theta);
            Ok(())
        },
    )?;
    let var = stats.variance();
    let b = cfg.matern()?.correlation_length();
    let mean_over = |pred: &dyn Fn(usize) -> bool| {
        let cells: Vec<usize> = (0..mesh.num_cells()).filter(|&c| pred(c)).collect();
        (cells.iter().map(|&c| var[c]).sum::<f64>() / cells.len().max(1) as f64, cells.len())
    };
    let (interior, n_int) = mean_over(&|c| distance_to_boundary(&mesh, c) > b);
    let (boundary, n_bnd) = mean_over(&|c| is_boundary_adjacent(&mesh, c));

    let h = header("variance-map", cfg, ctx.seed, &[("samples", n.to_string()), ("level", level.to_string())]);
    let mut cols = vec!["cell"];
    cols.extend(coord_columns(&mesh));
    cols.extend(["mean", "variance", "boundary_distance"]);
    let rows: Vec<_> = (0..mesh.num_cells())
        .map(|c| cell_row(&mesh, c, &[stats.mean()[c], var[c], distance_to_boundary(&mesh, c)]))
        .collect();
    ctx.out.write_csv("variance_map.csv", &h, &cols, &rows)?;
    let summary = format!(
        "{h}interior_mean_variance = {}\ninterior_cells = {n_int}\nboundary_mean_variance = {}\nboundary_cells = {n_bnd}\nboundary_to_interior = {}\n",
        fmt_f64(interior),
        fmt_f64(boundary),
        fmt_f64(boundary / interior)
    );
    ctx.out.write_text("variance_summary.txt", &summary)?;
    println!("interior mean variance {interior:.4} ({n_int} cells), boundary-adjacent {boundary:.4} ({n_bnd} cells)");
    Ok(())
}

pub fn level_rows(result: &MlmcResult) -> Vec<Vec<String>> {
    result
        .levels
        .iter()
        .map(|s: &LevelStats| {
            vec![
                s.level.to_string(),
                s.dofs.to_string(),
                s.samples().to_string(),
                fmt_f64(s.y.mean()),
                fmt_f64(s.y.variance()),
                fmt_f64(s.q.mean()),
                fmt_f64(s.q.variance()),
                fmt_f64(s.cost_per_sample()),
            ]
        })
        .collect()
}

pub const LEVEL_COLUMNS: [&str; 8] = ["level", "dofs", "N", "mean_Y", "var_Y", "mean_Q", "var_Q", "cost_sec"];

pub fn mlmc(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    if cfg.mesh.levels < 2 {
        return Err(CliError::Config("mlmc needs mesh.levels >= 2".into()));
    }
    let Some(mean_log) = mean_log_field(cfg)? else {
        return Ok(());
    };
    let pipeline = LognormalDarcyPipeline::new(build_sampler(cfg)?, cfg.flow_axis(), cfg.darcy_options(), mean_log)?;
    let mcfg = cfg.mlmc_config(ctx.seed);
    let result = mlmc_run(&mcfg, &pipeline)?;

    let h = header("mlmc", cfg, ctx.seed, &[]);
    ctx.out.write_csv("mlmc_levels.csv", &h, &LEVEL_COLUMNS, &level_rows(&result))?;

    let mut summary = h.clone();
    let mut kv = |k: &str, v: String| summary.push_str(&format!("{k} = {v}\n"));
    kv("estimate", fmt_f64(result.estimate));
    kv("standard_error", fmt_f64(result.standard_error()));
    kv("variance_bound", fmt_f64(result.variance_bound));
    kv("variance_target", fmt_f64(mcfg.split * mcfg.eps2));
    kv("bias_proxy", fmt_f64(result.bias_proxy));
    kv("bias_budget", fmt_f64(result.bias_budget));
    kv("bias_within_budget", (result.bias_proxy.powi(2) <= result.bias_budget).to_string());
    kv("total_cost_sec", fmt_f64(result.total_cost));
    kv("total_samples", result.total_samples().to_string());
    kv("rounds", result.rounds.to_string());
    kv("converged", result.converged.to_string());
    let n_ref = cfg.mlmc.reference_samples;
    if n_ref > 0 {
        let ref_seed = ctx.seed ^ REFERENCE_SEED_XOR;
        let r = mc_estimate(0, n_ref, &pipeline, ref_seed, mcfg.cost_model)?;
        let combined = (r.q.mean_variance() + result.variance_bound).sqrt();
        kv("reference_seed", ref_seed.to_string());
        kv("reference_samples", n_ref.to_string());
        kv("reference_mean", fmt_f64(r.q.mean()));
        kv("reference_variance", fmt_f64(r.q.variance()));
        kv("reference_standard_error", fmt_f64(r.q.mean_variance().sqrt()));
        kv("difference_in_standard_errors", fmt_f64((r.q.mean() - result.estimate).abs() / combined));
    }
    ctx.out.write_text("mlmc_summary.txt", &summary)?;
    println!(
        "MLMC estimate {:.6} ± {:.2e} from {} samples over {} levels ({} rounds, wall {:.1}s)",
        result.estimate,
        result.standard_error(),
        result.total_samples(),
        pipeline.num_levels(),
        result.rounds,
        result.total_wall
    );
    for s in &result.levels {
        println!(
            "  level {}: N = {:6}, var_Y = {:.3e}, var_Q = {:.3e}",
            s.level,
            s.samples(),
            s.y.variance(),
            s.q.variance()
        );
    }
    Ok(())
}

/// Relative Frobenius error expected from sampling noise alone for an
/// unbiased estimator with `n` Gaussian samples of covariance C:
/// sqrt((1 + tr(C)²/‖C‖²_F) / n).
pub fn sampling_error_floor(trace: f64, frobenius_sq: f64, n: usize) -> f64 {
    ((1.0 + trace * trace / frobenius_sq) / n as f64).sqrt()
}

pub fn covariance_check(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let cc = &cfg.covariance;
    let n = cc.samples;
    if n < 2 {
        return Err(CoreError::InsufficientSamples { needed: 2, got: n }.into());
    }
    let sampler = build_sampler(cfg)?;
    let level = cfg.sampling.level;
    let mesh = sampler.physical_mesh(level).clone();
    let params = cfg.matern()?;
    let model = CovarianceModel::new(params);
    let exact = centroid_covariance(&mesh, &model, cc.guard)?;

    let mut spde = Vec::with_capacity(n);
    for_each_ordered(
        n,
        |i| sampler.sample(StreamKey::new(ctx.seed, i, level as u32)).map(|f| f.theta_phys),
        |_, t| {
            spde.push(t);
            Ok(())
        },
    )?;
    let spde_cov = empirical_covariance(&spde)?;
    drop(spde);

    let c = assemble_covariance_matrix(&mesh, &model, cc.guard)?;
    let w = assemble_p0_mass(&mesh);
    let m = cc.truncation.unwrap_or(mesh.num_cells());
    let basis = kl_decompose(&c, &w, m)?;
    let kl: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| kl_sample(&basis, &draw_standard_normal(StreamKey::new(ctx.seed, i, KL_STREAM), m)))
        .collect::<Result<_, _>>()?;
    let kl_cov = empirical_covariance(&kl)?;

    let metrics = [
        ("cells", mesh.num_cells() as f64),
        ("samples", n as f64),
        ("spde_relative_frobenius", relative_frobenius_error(&spde_cov, &exact)),
        ("kl_relative_frobenius", relative_frobenius_error(&kl_cov, &exact)),
        ("kl_reconstruction", relative_frobenius_error(&basis.field_covariance(), &exact)),
        ("kl_energy_ratio", basis.energy_ratio()),
        ("sampling_error_floor", sampling_error_floor(exact.trace(), exact.norm_squared(), n)),
        ("spde_mean_marginal_variance", spde_cov.trace() / mesh.num_cells() as f64),
        ("target_marginal_variance", params.sigma2),
    ];
    let h = header("covariance-check", cfg, ctx.seed, &[]);
    let rows: Vec<_> = metrics.iter().map(|(k, v)| vec![k.to_string(), fmt_f64(*v)]).collect();
    ctx.out.write_csv("covariance_check.csv", &h, &["metric", "value"], &rows)?;
    for (k, v) in &metrics {
        println!("{k:>28}: {v:.6}");
    }

    if cc.export_basis {
        let eig: Vec<_> = basis
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, l)| vec![k.to_string(), fmt_f64(*l)])
            .collect();
        ctx.out.write_csv("kl_eigenvalues.csv", &h, &["mode", "eigenvalue"], &eig)?;
        let mut cols: Vec<String> = vec!["cell".into()];
        cols.extend((0..m).map(|k| format!("mode_{k}")));
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        let rows: Vec<_> = (0..mesh.num_cells())
            .map(|i| {
                let mut r = vec![i.to_string()];
                r.extend((0..m).map(|k| fmt_f64(basis.eigenvectors[(i, k)])));
                r
            })
            .collect();
        ctx.out.write_csv("kl_eigenvectors.csv", &h, &cols, &rows)?;
        let hb = header(
            "covariance-check",
            cfg,
            ctx.seed,
            &[("layout", format!("column-major {} x {m}", mesh.num_cells()))],
        );
        ctx.out.write_binary("kl_eigenvectors.bin", &hb, basis.eigenvectors.as_slice())?;
    }
    Ok(())
}

pub fn darcy(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let Some(mean_log) = mean_log_field(cfg)? else {
        return Ok(());
    };
    let level = cfg.sampling.level;
    let pipeline = LognormalDarcyPipeline::new(build_sampler(cfg)?, cfg.flow_axis(), cfg.darcy_options(), mean_log)?;
    let field = pipeline.sampler().sample(StreamKey::new(ctx.seed, 0, level as u32))?;
    let (k, sol) = pipeline.solve(level, &field.theta_phys)?;
    let problem = pipeline.problem(level);
    let keff = problem.effective_permeability(&sol)?;
    let div = problem.divergence_residual(&sol);
    let qmax = spde_mlmc::darcy::max_norm(&sol.q);

    let mesh = problem.mesh();
    let h = header("darcy", cfg, ctx.seed, &[("level", level.to_string())]);
    let mut cols = vec!["cell"];
    cols.extend(coord_columns(mesh));
    cols.extend(["log_k", "pressure"]);
    let rows: Vec<_> = (0..mesh.num_cells())
        .map(|c| cell_row(mesh, c, &[k.values()[c].ln(), sol.p[c]]))
        .collect();
    ctx.out.write_csv("darcy_cells.csv", &h, &cols, &rows)?;
    let summary = format!(
        "{h}effective_permeability = {}\niterations = {}\nrelative_residual = {}\ndivergence_max = {}\nflux_max = {}\n",
        fmt_f64(keff),
        sol.report.iterations,
        fmt_f64(sol.report.rel_residual),
        fmt_f64(div),
        fmt_f64(qmax)
    );
    ctx.out.write_text("darcy_summary.txt", &summary)?;
    println!(
        "k_eff = {keff:.8}, MINRES {} iterations, ‖Bq‖∞/‖q‖∞ = {:.2e}",
        sol.report.iterations,
        div / qmax
    );
    Ok(())
}
