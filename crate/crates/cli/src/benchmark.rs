//! Coarse-space benchmark on a fixed cross microstructure: energy error of a
//! single coarse solve and GMRES iterations across thresholds and contrasts.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use microtop_core::fem::{Assembler, PhysicalField};
use microtop_core::filters::neighbourhood_matrix;
use microtop_core::gmres::gmres_solve;
use microtop_core::spectral::{compute_class_modes, energy_error, SpectralBasis, TwoLevel};

use crate::config::ProblemConfig;
use crate::run::build_problem;
use crate::CliError;

/// Tight tolerance for the reference solution the errors are measured against.
const REFERENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossVariant {
    Clear,
    Filtered,
}

/// Cross of two bars of width `round(bar_fraction·n)`, shifted by half a tile
/// so the bars run along the cell edges and meet at the coarse nodes.
pub fn cross_tile(n: usize, bar_fraction: f64) -> Vec<f64> {
    let bar = ((bar_fraction * n as f64).round() as usize).clamp(1, n);
    let lo = (n - bar) / 2;
    let on_bar = |i: usize| (i + n / 2) % n >= lo && (i + n / 2) % n < lo + bar;
    let mut tile = vec![0.0; n * n];
    for lx in 0..n {
        for ly in 0..n {
            if on_bar(lx) || on_bar(ly) {
                tile[lx * n + ly] = 1.0;
            }
        }
    }
    tile
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub variant: CrossVariant,
    pub emin: f64,
    pub lambda: f64,
    pub n_t: usize,
    pub energy_error: f64,
    pub gmres_iterations: usize,
    pub gmres_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub variant: CrossVariant,
    pub emin: f64,
    pub class: usize,
    pub index: usize,
    pub eigenvalue: f64,
}

/// Runs the threshold × contrast sweep for one cross variant.
pub fn benchmark_solver(
    cfg: &ProblemConfig,
    variant: CrossVariant,
) -> Result<(Vec<BenchRow>, Vec<SpectrumRow>), CliError> {
    let b = &cfg.benchmark;
    if b.lambdas.is_empty() || b.emins.is_empty() {
        return Err(CliError::Config("benchmark: empty lambda or emin list".into()));
    }
    let mut problem_cfg = cfg.clone();
    problem_cfg.layout = crate::config::LayoutConfig::Single;
    let problem = build_problem(&problem_cfg)?;
    let n = cfg.geometry.n;
    let clear = cross_tile(n, b.bar_fraction);
    let rho = match variant {
        CrossVariant::Clear => clear,
        CrossVariant::Filtered => neighbourhood_matrix(1, n, b.rmin)?.mul_vec(&clear),
    };
    let lam_max = b.lambdas.iter().copied().fold(0.0, f64::max);
    let assembler = Assembler::new(&problem.mesh, &problem.k0);
    let f = &problem.load;

    let mut rows = Vec::new();
    let mut spectrum = Vec::new();
    for &emin in &b.emins {
        let field = PhysicalField {
            rho: rho.clone(),
            tiling: Arc::clone(&problem.tiling),
            penal: b.penal,
            emin,
            emax: cfg.material.emax,
        };
        let moduli = field.moduli();
        let k = assembler.assemble(&moduli);
        let t = Instant::now();
        let modes = compute_class_modes(
            &problem.mesh,
            &problem.k0,
            &moduli,
            &problem.aggs,
            &problem.classes,
            lam_max,
            cfg.solver.max_modes,
        )?;
        log::info!("emin {emin:e}: local eigenproblems {:.1}s", t.elapsed().as_secs_f64());
        for (class, m) in modes.iter().enumerate() {
            for (index, &eigenvalue) in m.values.iter().enumerate() {
                spectrum.push(SpectrumRow { variant, emin, class, index, eigenvalue });
            }
        }
        let full = SpectralBasis::from_modes(&problem.mesh, &problem.aggs, Arc::new(modes), lam_max);
        let reference = {
            let coarse = full.factorise(&problem.mesh, &problem.k0, &moduli)?;
            let pc = TwoLevel { k: &k, basis: &full, coarse: &coarse };
            gmres_solve(&k, f, &pc, REFERENCE_TOL, None, cfg.solver.max_gmres)?.0
        };
        for &lambda in &b.lambdas {
            let basis = full.truncated(&problem.mesh, &problem.aggs, lambda);
            let coarse = basis.factorise(&problem.mesh, &problem.k0, &moduli)?;
            let pc = TwoLevel { k: &k, basis: &basis, coarse: &coarse };
            let err = energy_error(&k, &reference, &pc.coarse_solve(f));
            let (_, stats) = gmres_solve(&k, f, &pc, b.tol, None, cfg.solver.max_gmres)?;
            log::info!(
                "emin {emin:e} lambda {lambda:e}: N_t {} error {err:.4} iterations {}",
                basis.num_coarse(),
                stats.iterations
            );
            rows.push(BenchRow {
                variant,
                emin,
                lambda,
                n_t: basis.num_coarse(),
                energy_error: err,
                gmres_iterations: stats.iterations,
                gmres_seconds: stats.solve_seconds,
            });
        }
    }
    Ok((rows, spectrum))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let err = |e| CliError::Csv(path.display().to_string(), e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Io(path.display().to_string(), e))
}

/// Both variants; writes `benchmark.csv` and `spectrum.csv` under `out`.
pub fn run_benchmark(cfg: &ProblemConfig, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(out.display().to_string(), e))?;
    let mut rows = Vec::new();
    let mut spectrum = Vec::new();
    for variant in [CrossVariant::Clear, CrossVariant::Filtered] {
        let (r, s) = benchmark_solver(cfg, variant)?;
        rows.extend(r);
        spectrum.extend(s);
    }
    write_csv(&out.join("benchmark.csv"), &rows)?;
    write_csv(&out.join("spectrum.csv"), &spectrum)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_is_symmetric_and_periodic_through_corners() {
        let n = 20;
        let t = cross_tile(n, 0.3);
        for lx in 0..n {
            for ly in 0..n {
                assert_eq!(t[lx * n + ly], t[ly * n + lx]);
                assert_eq!(t[lx * n + ly], t[(n - 1 - lx) * n + ly]);
            }
        }
        // Corners are solid, the centre is void.
        assert_eq!(t[0], 1.0);
        assert_eq!(t[(n / 2) * n + n / 2], 0.0);
        let vol: f64 = t.iter().sum::<f64>() / (n * n) as f64;
        assert!((vol - 0.51).abs() < 1e-12, "{vol}");
    }
}
