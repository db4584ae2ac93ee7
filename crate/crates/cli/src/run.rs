//! `optimize` and `analyze` orchestration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use microtop_core::optimizer::{
    evaluate_design, run_optimisation, volume_constraint, DesignProblem, InitialDesign, OptimizationResult,
    SolverSession,
};

use crate::config::ProblemConfig;
use crate::output::{
    convergence_header, convergence_row, macro_pixels, tile_pixels, tiles_top_down, write_dump, write_pgm,
};
use crate::CliError;

pub fn build_problem(cfg: &ProblemConfig) -> Result<DesignProblem, CliError> {
    Ok(DesignProblem::new(
        &cfg.mesh_config(),
        cfg.design_layout()?,
        cfg.material(),
        cfg.filter_kind(),
        cfg.filter.rmin,
    )?)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub preset: String,
    pub dofs: usize,
    pub design_variables: usize,
    pub iterations: usize,
    pub etas: Vec<f64>,
    pub final_compliances: Vec<f64>,
    pub objective: f64,
    pub g: f64,
    pub mnd: f64,
    pub volume_fractions: Vec<f64>,
    pub basis_builds: usize,
    pub gmres_iterations: usize,
    pub seconds: f64,
    pub basis_seconds: f64,
    pub solve_seconds: f64,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.display().to_string(), e))
}

fn eta_tag(eta: f64) -> String {
    format!("eta{eta:.2}")
}

/// Runs the optimisation and writes images, `convergence.csv`,
/// `summary.json` and `design.bin` under `out`.
pub fn optimize(
    cfg: &ProblemConfig,
    out: &Path,
    restart: Option<Vec<f64>>,
) -> Result<(OptimizationResult, RunSummary), CliError> {
    create_dir(out)?;
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(cfg).expect("config serialises"),
    )
    .map_err(|e| CliError::Io(out.join("config.json").display().to_string(), e))?;

    let problem = build_problem(cfg)?;
    let mut opts = cfg.optimizer_options();
    if let Some(x) = restart {
        opts.initial = InitialDesign::Given(x);
    }
    log::info!(
        "{}: {} DOF, {} design variables, {} agglomerate classes",
        cfg.preset,
        problem.mesh.num_dofs(),
        problem.num_vars(),
        problem.classes.members.len()
    );

    let csv_path = out.join("convergence.csv");
    let csv_err = |e| CliError::Csv(csv_path.display().to_string(), e);
    let mut writer = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    writer.write_record(convergence_header(opts.etas.len())).map_err(csv_err)?;
    let mut write_failure = None;
    let result = run_optimisation(&problem, &opts, &mut |rec| {
        if write_failure.is_none() {
            write_failure = writer.write_record(convergence_row(rec)).err();
        }
    })?;
    if let Some(e) = write_failure {
        return Err(csv_err(e));
    }
    writer.flush().map_err(|e| CliError::Io(csv_path.display().to_string(), e))?;

    let n = cfg.geometry.n;
    let order = tiles_top_down(&problem.layout);
    for (stage, fields) in result.stage_designs.iter().enumerate() {
        for (rho, eta) in fields.iter().zip(&opts.etas) {
            let (w, h, px) = tile_pixels(rho, n, &order);
            write_pgm(&out.join(format!("stage{stage}_{}.pgm", eta_tag(*eta))), w, h, &px)?;
        }
    }
    for r in &result.realizations {
        let (w, h, px) = tile_pixels(&r.rho, n, &order);
        write_pgm(&out.join(format!("final_{}.pgm", eta_tag(r.eta))), w, h, &px)?;
    }
    let mid = &result.realizations[result.realizations.len() / 2];
    let (w, h, px) = macro_pixels(&mid.rho, &problem.tiling, &problem.mesh);
    write_pgm(&out.join("macro.pgm"), w, h, &px)?;
    write_dump(&out.join("design.bin"), &result.design)?;

    let last = result.records.last().expect("at least one iteration");
    let summary = RunSummary {
        preset: cfg.preset.clone(),
        dofs: problem.mesh.num_dofs(),
        design_variables: problem.num_vars(),
        iterations: result.records.len(),
        etas: opts.etas.clone(),
        final_compliances: last.compliances.clone(),
        objective: last.objective,
        g: last.constraint,
        mnd: last.nondiscreteness,
        volume_fractions: result.realizations.iter().map(|r| problem.volume_fraction(&r.rho)).collect(),
        basis_builds: result.basis_builds,
        gmres_iterations: result.total_gmres,
        seconds: result.seconds,
        basis_seconds: result.basis_seconds,
        solve_seconds: result.solve_seconds,
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialises"),
    )
    .map_err(|e| CliError::Io(out.join("summary.json").display().to_string(), e))?;
    Ok((result, summary))
}

#[derive(Clone, Debug, Serialize)]
pub struct Analysis {
    pub penal: f64,
    pub beta: f64,
    pub etas: Vec<f64>,
    pub compliances: Vec<f64>,
    pub volume_fractions: Vec<f64>,
    pub g: f64,
    pub gmres_iterations: Vec<usize>,
}

/// Single solve of a stored design at the final continuation parameters.
pub fn analyze(cfg: &ProblemConfig, design: &[f64]) -> Result<Analysis, CliError> {
    let problem = build_problem(cfg)?;
    if design.len() != problem.num_vars() {
        return Err(CliError::Config(format!(
            "design has {} variables, the configured problem has {}",
            design.len(),
            problem.num_vars()
        )));
    }
    let opts = cfg.optimizer_options();
    let stage = *opts.schedule.stages.last().expect("schedule has stages");
    let mut session = SolverSession::new(opts.solver.clone());
    let eval = evaluate_design(&problem, &mut session, design, stage, &opts.etas, true)?;
    let (g, _) = volume_constraint(&problem, &eval, opts.vf, stage.beta);
    Ok(Analysis {
        penal: stage.penal,
        beta: stage.beta,
        etas: opts.etas.clone(),
        compliances: eval.realizations.iter().map(|r| r.compliance).collect(),
        volume_fractions: eval.realizations.iter().map(|r| problem.volume_fraction(&r.rho)).collect(),
        g,
        gmres_iterations: eval.realizations.iter().map(|r| r.stats.iterations).collect(),
    })
}

pub fn default_output_dir(cfg: &ProblemConfig) -> PathBuf {
    PathBuf::from("runs").join(&cfg.preset)
}
