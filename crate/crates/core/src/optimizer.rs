//! Design loop: filtering and projection, state solves, robust objective,
//! volume constraint, MMA and continuation.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::SparseCholesky;
use crate::error::{Error, Result};
use crate::fem::{
    accumulate_sensitivities, compliance, element_energies, element_stiffness_for, Assembler, ElementStiffness,
    PhysicalField, PlaneModel,
};
use crate::filters::{heaviside_derivative, nondiscreteness_weighted, project, DensityFilter, FilterKind, Projection};
use crate::gmres::{gmres_solve, SolveStats};
use crate::mesh::{
    build_agglomerates, build_mesh, classify_agglomerates, Agglomerate, ClassMap, DesignLayout, MeshConfig,
    MeshTopology,
};
use crate::mma::{initial_asymptote, MmaState};
use crate::policy::{PolicyState, RebuildPolicy};
use crate::sparse::CsrMatrix;
use crate::spectral::{compute_class_modes, SpectralBasis, TwoLevel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub emin: f64,
    pub emax: f64,
    pub nu: f64,
    pub model: PlaneModel,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            emin: 1e-9,
            emax: 1.0,
            nu: 0.3,
            model: PlaneModel::Stress,
        }
    }
}

/// Everything about the discretised problem that does not change during the
/// optimisation.
pub struct DesignProblem {
    pub mesh: MeshTopology,
    pub layout: DesignLayout,
    pub aggs: Vec<Agglomerate>,
    pub classes: ClassMap,
    pub tiling: Arc<Vec<u32>>,
    /// Fine elements per design variable.
    pub counts: Vec<f64>,
    pub k0: ElementStiffness,
    pub material: Material,
    pub filter: DensityFilter,
    pub load: Vec<f64>,
    pub assembler: Assembler,
}

impl DesignProblem {
    /// `rmin` is in fine-element edge lengths.
    pub fn new(
        mesh_cfg: &MeshConfig,
        layout: DesignLayout,
        material: Material,
        filter_kind: FilterKind,
        rmin: f64,
    ) -> Result<Self> {
        let mesh = build_mesh(mesh_cfg)?;
        if layout.tile_of_row.len() != mesh.mx {
            return Err(Error::Config(format!(
                "layout covers {} coarse rows, mesh has {}",
                layout.tile_of_row.len(),
                mesh.mx
            )));
        }
        if !(material.emin > 0.0 && material.emin < material.emax) {
            return Err(Error::Config(format!(
                "material: need 0 < Emin < Emax (got {}, {})",
                material.emin, material.emax
            )));
        }
        let k0 = element_stiffness_for(material.nu, material.model)?;
        let mut aggs = build_agglomerates(&mesh);
        let classes = classify_agglomerates(&mut aggs, &mesh, &layout);
        let tiling = Arc::new(layout.tiling_map(&mesh));
        let counts = layout.copy_counts(&mesh);
        let filter = DensityFilter::build(filter_kind, layout.kind, layout.num_tiles, mesh.n, rmin)?;
        let load = mesh.load_vector();
        let assembler = Assembler::new(&mesh, &k0);
        Ok(Self {
            mesh,
            layout,
            aggs,
            classes,
            tiling,
            counts,
            k0,
            material,
            filter,
            load,
            assembler,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.counts.len()
    }

    pub fn field(&self, rho: Vec<f64>, penal: f64) -> PhysicalField {
        PhysicalField {
            rho,
            tiling: Arc::clone(&self.tiling),
            penal,
            emin: self.material.emin,
            emax: self.material.emax,
        }
    }

    /// Copy-weighted mean of a tile field.
    pub fn volume_fraction(&self, rho: &[f64]) -> f64 {
        let total: f64 = self.counts.iter().sum();
        rho.iter().zip(&self.counts).map(|(r, c)| r * c).sum::<f64>() / total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Direct,
    Msfem,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub lambda_threshold: f64,
    pub max_modes: usize,
    pub tol: f64,
    pub policy: RebuildPolicy,
    pub warm_start: bool,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Msfem,
            lambda_threshold: 6.5e-4,
            max_modes: 200,
            tol: 1e-6,
            policy: RebuildPolicy::Heuristic {
                threshold_pct: 20.0,
                warm: true,
            },
            warm_start: true,
            max_iter: crate::gmres::DEFAULT_MAX_ITER,
        }
    }
}

/// Index of the realisation the basis is built from: the dilated one
/// (smallest threshold).
pub fn basis_realization(etas: &[f64]) -> usize {
    etas.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// Solver state carried between design iterations.
pub struct SolverSession {
    pub options: SolverOptions,
    pub policy: PolicyState,
    basis: Option<SpectralBasis>,
    previous: Vec<Option<Vec<f64>>>,
    k: Option<CsrMatrix>,
    pub total_gmres: usize,
}

impl SolverSession {
    pub fn new(options: SolverOptions) -> Self {
        let policy = PolicyState::new(options.policy);
        Self {
            options,
            policy,
            basis: None,
            previous: Vec::new(),
            k: None,
            total_gmres: 0,
        }
    }

    pub fn basis(&self) -> Option<&SpectralBasis> {
        self.basis.as_ref()
    }

    fn rebuild(&mut self, problem: &DesignProblem, moduli: &[f64]) -> Result<f64> {
        let start = Instant::now();
        let o = &self.options;
        let modes = compute_class_modes(
            &problem.mesh,
            &problem.k0,
            moduli,
            &problem.aggs,
            &problem.classes,
            o.lambda_threshold,
            o.max_modes,
        )?;
        self.basis = Some(SpectralBasis::from_modes(
            &problem.mesh,
            &problem.aggs,
            Arc::new(modes),
            o.lambda_threshold,
        ));
        self.policy.record_build();
        Ok(start.elapsed().as_secs_f64())
    }

    fn solve(&mut self, problem: &DesignProblem, moduli: &[f64], slot: usize) -> Result<(Vec<f64>, SolveStats)> {
        let k = match self.k.as_mut() {
            Some(k) => {
                problem.assembler.assemble_into(moduli, k);
                &*k
            }
            None => &*self.k.insert(problem.assembler.assemble(moduli)),
        };
        if self.previous.len() <= slot {
            self.previous.resize(slot + 1, None);
        }
        match self.options.kind {
            SolverKind::Direct => {
                let start = Instant::now();
                let u = SparseCholesky::new(k)?.solve(&problem.load);
                let stats = SolveStats {
                    solve_seconds: start.elapsed().as_secs_f64(),
                    ..Default::default()
                };
                Ok((u, stats))
            }
            SolverKind::Msfem => {
                let basis = self.basis.as_ref().expect("basis built before solving");
                let start = Instant::now();
                let coarse = basis.factorise(&problem.mesh, &problem.k0, moduli)?;
                let coarse_seconds = start.elapsed().as_secs_f64();
                let pc = TwoLevel { k, basis, coarse: &coarse };
                let x0 = if self.options.warm_start {
                    self.previous[slot].as_deref()
                } else {
                    None
                };
                let (u, mut stats) = gmres_solve(k, &problem.load, &pc, self.options.tol, x0, self.options.max_iter)?;
                stats.coarse_seconds = coarse_seconds;
                self.total_gmres += stats.iterations;
                self.previous[slot] = Some(u.clone());
                Ok((u, stats))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RealizationState {
    pub eta: f64,
    /// Projected tile densities.
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub compliance: f64,
    pub stats: SolveStats,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub filtered: Vec<f64>,
    pub realizations: Vec<RealizationState>,
    pub basis_rebuilt: bool,
    pub coarse_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub penal: f64,
    pub beta: f64,
}

/// Filters once, projects per threshold and solves every realisation, the
/// dilated one first. The basis is rebuilt from the dilated field when the
/// policy asks for it or `force_rebuild` is set.
pub fn evaluate_design(
    problem: &DesignProblem,
    session: &mut SolverSession,
    x: &[f64],
    stage: Stage,
    etas: &[f64],
    force_rebuild: bool,
) -> Result<Evaluation> {
    let filtered = problem.filter.apply(x);
    let first = basis_realization(etas);
    let mut order: Vec<usize> = (0..etas.len()).collect();
    order.swap(0, first);

    let mut states: Vec<Option<RealizationState>> = vec![None; etas.len()];
    let mut rebuilt = false;
    for (pos, &k) in order.iter().enumerate() {
        let eta = etas[k];
        let rho = project(&filtered, Projection { beta: stage.beta, eta });
        let field = problem.field(rho, stage.penal);
        let moduli = field.moduli();
        let mut basis_seconds = 0.0;
        if pos == 0
            && session.options.kind == SolverKind::Msfem
            && (session.basis.is_none() || session.policy.needs_rebuild(force_rebuild))
        {
            basis_seconds = session.rebuild(problem, &moduli)?;
            rebuilt = true;
        }
        let (u, mut stats) = match session.solve(problem, &moduli, k) {
            Err(Error::GmresNotConverged { .. }) if !rebuilt && session.options.kind == SolverKind::Msfem => {
                log::warn!("GMRES stalled with a stale basis; rebuilding from the current field");
                basis_seconds += session.rebuild(problem, &moduli)?;
                rebuilt = true;
                session.solve(problem, &moduli, k)?
            }
            other => other?,
        };
        stats.basis_recomputed = rebuilt && pos == 0;
        stats.basis_seconds = basis_seconds;
        let c = compliance(&problem.load, &u);
        states[k] = Some(RealizationState {
            eta,
            rho: field.rho,
            u,
            compliance: c,
            stats,
        });
    }
    let realizations: Vec<RealizationState> = states.into_iter().map(Option::unwrap).collect();
    if session.options.kind == SolverKind::Msfem {
        let worst = realizations.iter().map(|r| r.stats.iterations).max().unwrap_or(0);
        session.policy.record_solve(worst);
    }
    Ok(Evaluation {
        filtered,
        realizations,
        basis_rebuilt: rebuilt,
        coarse_size: session.basis.as_ref().map_or(0, SpectralBasis::num_coarse),
    })
}

/// Mean plus `κ` times the population standard deviation, with the gradient
/// weight of every realisation. The spread term is dropped when the variance
/// is below 1e-30.
pub fn robust_objective(compliances: &[f64], kappa: f64) -> (f64, Vec<f64>) {
    let m = compliances.len() as f64;
    let mean = compliances.iter().sum::<f64>() / m;
    let var = compliances.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / m;
    if var < 1e-30 || kappa == 0.0 {
        return (mean, vec![1.0 / m; compliances.len()]);
    }
    let sd = var.sqrt();
    let weights = compliances
        .iter()
        .map(|c| 1.0 / m + kappa * (c - mean) / (m * sd))
        .collect();
    (mean + kappa * sd, weights)
}

/// Expected-volume constraint `E[V(ρ̄)] / v_f − 1` and its design gradient.
pub fn volume_constraint(problem: &DesignProblem, eval: &Evaluation, vf: f64, beta: f64) -> (f64, Vec<f64>) {
    let m = eval.realizations.len() as f64;
    let total: f64 = problem.counts.iter().sum();
    let g = eval
        .realizations
        .iter()
        .map(|r| problem.volume_fraction(&r.rho))
        .sum::<f64>()
        / (m * vf)
        - 1.0;
    let mut d = vec![0.0; problem.num_vars()];
    for r in &eval.realizations {
        let p = Projection { beta, eta: r.eta };
        for ((di, &x), &c) in d.iter_mut().zip(&eval.filtered).zip(&problem.counts) {
            *di += heaviside_derivative(x, p) * c / (m * vf * total);
        }
    }
    (g, problem.filter.apply_adjoint(&d))
}

/// Design gradient of `Σ_k w_k c_k`.
pub fn objective_gradient(problem: &DesignProblem, eval: &Evaluation, weights: &[f64], stage: Stage) -> Vec<f64> {
    let mut d = vec![0.0; problem.num_vars()];
    for (r, &w) in eval.realizations.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let field = problem.field(r.rho.clone(), stage.penal);
        let energies = element_energies(&problem.mesh, &problem.k0, &r.u);
        let dc = accumulate_sensitivities(&energies, &field);
        let p = Projection {
            beta: stage.beta,
            eta: r.eta,
        };
        for ((di, &x), g) in d.iter_mut().zip(&eval.filtered).zip(dc) {
            *di += w * heaviside_derivative(x, p) * g;
        }
    }
    problem.filter.apply_adjoint(&d)
}

#[derive(Clone, Debug)]
pub struct Schedule {
    pub stages: Vec<Stage>,
    pub stage_cap: usize,
    pub max_iter: usize,
    pub change_tol: f64,
    pub window: usize,
    /// Keep iterating in the final stage until `max_iter` instead of stopping
    /// on the change criterion.
    pub full_budget: bool,
}

impl Schedule {
    /// `p = 1, …, 5` at fixed `β`, at most 50 iterations per stage.
    pub fn single(beta: f64, max_iter: usize) -> Self {
        Self {
            stages: (1..=5).map(|p| Stage { penal: p as f64, beta }).collect(),
            stage_cap: 50,
            max_iter,
            change_tol: 1e-3,
            window: 3,
            full_budget: false,
        }
    }

    /// `(1.5, β0) → (p1, β0) → (p1, β1)`, at most 100 iterations per stage.
    pub fn robust(p1: f64, beta0: f64, beta1: f64, max_iter: usize) -> Self {
        Self {
            stages: vec![
                Stage { penal: 1.5, beta: beta0 },
                Stage { penal: p1, beta: beta0 },
                Stage { penal: p1, beta: beta1 },
            ],
            stage_cap: 100,
            max_iter,
            change_tol: 1e-3,
            window: 3,
            full_budget: false,
        }
    }
}

/// True when the stage should end: the largest relative objective change in
/// the window is below `tol`, or the stage has used `cap` iterations.
pub fn continuation_step(stage_iter: usize, window_change: Option<f64>, cap: usize, tol: f64) -> bool {
    stage_iter >= cap || window_change.is_some_and(|c| c < tol)
}

#[derive(Clone, Debug)]
pub enum InitialDesign {
    Uniform,
    /// `v_f ± 0.1` uniform noise from a seeded generator.
    Random(u64),
    /// Restart from a stored design vector.
    Given(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct OptimizerOptions {
    pub vf: f64,
    pub etas: Vec<f64>,
    pub kappa: f64,
    pub schedule: Schedule,
    pub solver: SolverOptions,
    pub initial: InitialDesign,
}

#[derive(Clone, Debug)]
pub struct ConvergenceRecord {
    pub iter: usize,
    pub stage: usize,
    pub penal: f64,
    pub beta: f64,
    pub objective: f64,
    pub compliances: Vec<f64>,
    pub constraint: f64,
    pub nondiscreteness: f64,
    pub gmres_iterations: Vec<usize>,
    pub basis_rebuilt: bool,
    pub coarse_size: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub design: Vec<f64>,
    pub filtered: Vec<f64>,
    pub realizations: Vec<RealizationState>,
    pub records: Vec<ConvergenceRecord>,
    pub basis_builds: usize,
    pub total_gmres: usize,
    pub seconds: f64,
    /// Time spent on local eigenproblems.
    pub basis_seconds: f64,
    /// Time spent on coarse factorisations and Krylov or direct solves.
    pub solve_seconds: f64,
    /// Last iterate of every stage (projected tile fields, one per realisation).
    pub stage_designs: Vec<Vec<Vec<f64>>>,
}

fn initial_design(problem: &DesignProblem, opts: &OptimizerOptions) -> Result<Vec<f64>> {
    let n = problem.num_vars();
    Ok(match &opts.initial {
        InitialDesign::Given(x) => {
            if x.len() != n {
                return Err(Error::Config(format!("initial design has {} variables, problem has {n}", x.len())));
            }
            x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
        }
        InitialDesign::Uniform => vec![opts.vf; n],
        InitialDesign::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n)
                .map(|_| (opts.vf + 0.1 * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0))
                .collect()
        }
    })
}

pub fn run_optimisation(
    problem: &DesignProblem,
    opts: &OptimizerOptions,
    on_iter: &mut dyn FnMut(&ConvergenceRecord),
) -> Result<OptimizationResult> {
    if opts.etas.is_empty() {
        return Err(Error::Config("projection: empty threshold set".into()));
    }
    if opts.schedule.stages.is_empty() {
        return Err(Error::Config("continuation: no stages".into()));
    }
    let start = Instant::now();
    let n = problem.num_vars();
    let mut x = initial_design(problem, opts)?;
    let mut session = SolverSession::new(opts.solver.clone());
    let sched = &opts.schedule;
    let mut stage_idx = 0;
    let mut stage = sched.stages[0];
    let mut mma = MmaState::new(&x, vec![0.0; n], vec![1.0; n], initial_asymptote(stage.beta));
    let mut stage_iter = 0;
    let mut stage_objectives: Vec<f64> = Vec::new();
    let mut force = true;
    let mut scale = None;
    let mut records = Vec::new();
    let mut stage_designs = Vec::new();
    let mid = opts.etas.len() / 2;
    let (mut basis_seconds, mut solve_seconds) = (0.0, 0.0);

    let mut iter = 0;
    loop {
        iter += 1;
        stage_iter += 1;
        let eval = evaluate_design(problem, &mut session, &x, stage, &opts.etas, force)?;
        force = false;
        for r in &eval.realizations {
            basis_seconds += r.stats.basis_seconds;
            solve_seconds += r.stats.coarse_seconds + r.stats.solve_seconds;
        }
        let cs: Vec<f64> = eval.realizations.iter().map(|r| r.compliance).collect();
        let (f, weights) = robust_objective(&cs, opts.kappa);
        let (g, dg) = volume_constraint(problem, &eval, opts.vf, stage.beta);
        let df = objective_gradient(problem, &eval, &weights, stage);
        let s = *scale.get_or_insert(if f.abs() > 0.0 { 10.0 / f.abs() } else { 1.0 });
        let df_scaled: Vec<f64> = df.iter().map(|d| d * s).collect();

        let record = ConvergenceRecord {
            iter,
            stage: stage_idx,
            penal: stage.penal,
            beta: stage.beta,
            objective: f,
            compliances: cs,
            constraint: g,
            nondiscreteness: nondiscreteness_weighted(&eval.realizations[mid].rho, &problem.counts),
            gmres_iterations: eval.realizations.iter().map(|r| r.stats.iterations).collect(),
            basis_rebuilt: eval.basis_rebuilt,
            coarse_size: eval.coarse_size,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "it {:4} stage {} p {:.2} beta {:.0} f {:.6e} g {:+.3e} mnd {:.3} gmres {:?}{}",
            iter,
            stage_idx,
            stage.penal,
            stage.beta,
            f,
            g,
            record.nondiscreteness,
            record.gmres_iterations,
            if eval.basis_rebuilt { " rebuilt" } else { "" }
        );
        on_iter(&record);
        records.push(record);

        stage_objectives.push(f);
        let window_change = if stage_objectives.len() > sched.window {
            let tail = &stage_objectives[stage_objectives.len() - sched.window - 1..];
            Some(
                tail.windows(2)
                    .map(|w| if w[1] == 0.0 { (w[1] - w[0]).abs() } else { ((w[1] - w[0]) / w[1]).abs() })
                    .fold(0.0, f64::max),
            )
        } else {
            None
        };
        let last_stage = stage_idx + 1 == sched.stages.len();
        let advance = continuation_step(stage_iter, window_change, sched.stage_cap, sched.change_tol);

        if iter >= sched.max_iter || (last_stage && advance && !sched.full_budget) {
            stage_designs.push(eval.realizations.iter().map(|r| r.rho.clone()).collect());
            return Ok(OptimizationResult {
                design: x,
                filtered: eval.filtered,
                realizations: eval.realizations,
                records,
                basis_builds: session.policy.builds,
                total_gmres: session.total_gmres,
                seconds: start.elapsed().as_secs_f64(),
                basis_seconds,
                solve_seconds,
                stage_designs,
            });
        }

        x = mma.update(&x, &df_scaled, g, &dg)?;
        if advance && !last_stage {
            stage_designs.push(eval.realizations.iter().map(|r| r.rho.clone()).collect());
            stage_idx += 1;
            stage = sched.stages[stage_idx];
            stage_iter = 0;
            stage_objectives.clear();
            mma.restart(&x, initial_asymptote(stage.beta));
            force = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_objective_examples() {
        let (f, w) = robust_objective(&[2.0, 2.0, 2.0], 1.0);
        assert_eq!(f, 2.0);
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let (f, _) = robust_objective(&[1.0, 2.0, 3.0], 1.0);
        assert!((f - (2.0 + (2.0f64 / 3.0).sqrt())).abs() < 1e-14);
        assert!((f - 2.8165).abs() < 1e-4);
        let (f, _) = robust_objective(&[1.0, 2.0, 3.0], 0.0);
        assert_eq!(f, 2.0);
    }

    #[test]
    fn robust_weights_match_differences() {
        let c = [1.3, 2.1, 2.9];
        let (_, w) = robust_objective(&c, 1.0);
        for k in 0..3 {
            let h = 1e-6;
            let mut a = c;
            let mut b = c;
            a[k] += h;
            b[k] -= h;
            let fd = (robust_objective(&a, 1.0).0 - robust_objective(&b, 1.0).0) / (2.0 * h);
            assert!((fd - w[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn continuation_rule() {
        assert!(continuation_step(10, Some(5e-4), 50, 1e-3));
        assert!(continuation_step(50, Some(0.01), 50, 1e-3));
        assert!(!continuation_step(49, Some(0.01), 50, 1e-3));
        assert!(!continuation_step(2, None, 50, 1e-3));
    }

    #[test]
    fn dilated_realization_feeds_the_basis() {
        assert_eq!(basis_realization(&[0.3, 0.5, 0.7]), 0);
        assert_eq!(basis_realization(&[0.5]), 0);
    }

    #[test]
    fn schedules() {
        let s = Schedule::single(64.0, 200);
        assert_eq!(s.stages.iter().map(|s| s.penal).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = Schedule::robust(5.0, 16.0, 64.0, 300);
        assert_eq!(r.stages[0], Stage { penal: 1.5, beta: 16.0 });
        assert_eq!(r.stages[2], Stage { penal: 5.0, beta: 64.0 });
        for w in r.stages.windows(2) {
            assert!(w[1].penal >= w[0].penal && w[1].beta >= w[0].beta);
        }
    }
}
