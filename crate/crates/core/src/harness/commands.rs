use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, ExperimentKind, HarnessError, Key, Report, ResultTable, BUILD_ID};
use crate::domain::residual_breakdown;
use crate::engine::{mean_and_se, qv_estimate, sample_from_densities, sample_sd, Dynamics, ReplicaPlan, RunOptions};
use crate::generator::{
    crank_nicolson, evolve_density, spectral_coefficients, spectrum, write_field_csv, DensityField, SparseGenerator,
    SpectralPropagator, DENSE_CUTOFF,
};
use crate::lattice::RateField;
use crate::linalg::{max_abs_diff, splitmix64};

/// Dispatches on `config.kind`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Rates => cmd_rates(config),
        ExperimentKind::Spectrum => cmd_spectrum(config),
        ExperimentKind::GeneratorConvergence => cmd_generator_convergence(config),
        ExperimentKind::Hydro => cmd_hydro(config),
        ExperimentKind::Qv => cmd_qv(config),
        ExperimentKind::Uniqueness => cmd_uniqueness_demo(config),
    }
}

fn table(config: &ExperimentConfig, name: &str, keys: &[&str], metrics: &[&str]) -> ResultTable {
    let mut t = ResultTable::new(name, config.kind, keys, metrics);
    t.meta("seed", config.replicas.seed);
    t.meta("build", BUILD_ID);
    t.meta("config_sha256", config.digest());
    t.meta("d", config.dim);
    t.meta("membrane", config.membrane_label());
    t.meta("horizon", format!("{:.16e}", config.horizon));
    t
}

/// Independent seed for one lattice size.
fn cell_seed(base: u64, side: usize) -> u64 {
    let mut state = base ^ (side as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}

fn volume(rates: &RateField) -> f64 {
    rates.lattice().sites() as f64
}

fn finish(config: &ExperimentConfig, mut tables: Vec<ResultTable>, files: Vec<(String, String)>, failures: Vec<String>) -> Result<Report, HarnessError> {
    for t in tables.iter_mut() {
        t.finalize()?;
    }
    Ok(Report { kind: config.kind, tables, files, failures })
}

/// Rate-field summaries and per-size rate dumps.
pub fn cmd_rates(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut t = table(
        config,
        "rates",
        &["N"],
        &["sites", "bonds", "slow_bonds", "gamma_sites", "min_rate", "total_rate", "max_rate_error"],
    );
    let membrane = config.membrane.build(config.dim)?;
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for &side in &config.sizes {
        let rates = config.rate_field(side)?;
        let lattice = *rates.lattice();
        let n = side as f64;
        let mut max_err: f64 = 0.0;
        if let Some(m) = &membrane {
            for sb in rates.slow_bonds() {
                let (_, axis) = lattice.bond_origin(sb.bond);
                let normal = m.normal_at(&sb.crossing.u)?;
                max_err = max_err.max((rates.rate(sb.bond) - normal[axis].abs() / n).abs());
            }
        }
        if max_err > 1e-12 {
            failures.push(format!("N={side}: slow-bond rate deviates from |ζ·e_j|/N by {max_err:e}"));
        }
        let gamma_sites = {
            let mut touched = vec![false; lattice.sites()];
            for sb in rates.slow_bonds() {
                let (x, y) = lattice.bond_endpoints(sb.bond);
                touched[x] = true;
                touched[y] = true;
            }
            touched.iter().filter(|b| **b).count()
        };
        let min_rate = rates.rates().iter().copied().fold(f64::INFINITY, f64::min);
        t.push(
            vec![Key::Int(side as u64)],
            vec![
                lattice.sites() as f64,
                lattice.bonds() as f64,
                rates.slow_bonds().len() as f64,
                gamma_sites as f64,
                min_rate,
                rates.total_rate(),
                max_err,
            ],
        );
        let mut buf = Vec::new();
        rates.write_csv(&mut buf)?;
        files.push((format!("rates_N{side}.csv"), String::from_utf8(buf).expect("CSV is UTF-8")));
    }
    finish(config, vec![t], files, failures)
}

/// Smallest eigenpairs of `−𝕃_N` per size.
pub fn cmd_spectrum(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut t = table(config, "spectrum", &["N", "n"], &["eigenvalue", "residual"]);
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for &side in &config.sizes {
        let rates = config.rate_field(side)?;
        let gen = SparseGenerator::assemble(&rates);
        let sites = gen.sites();
        let k = match config.spectrum.eigenpairs {
            Some(k) => k.min(sites),
            None if sites <= DENSE_CUTOFF => sites,
            None => {
                return Err(HarnessError::Config(format!(
                    "N={side} has {sites} sites; set spectrum.eigenpairs for lattices above {DENSE_CUTOFF} sites"
                )))
            }
        };
        let spec = spectrum(&gen, k)?;
        let mus = spec.eigenvalues();
        for (n, mu) in mus.iter().enumerate() {
            t.push(vec![Key::Int(side as u64), Key::Int(n as u64)], vec![*mu, spec.residual(&gen, n)]);
        }
        if let Some(mu0) = mus.first() {
            if mu0.abs() > 1e-10 {
                failures.push(format!("N={side}: μ_0 = {mu0:e} is not zero"));
            }
        }
        if let Some(mu1) = mus.get(1) {
            if *mu1 <= 1e-6 {
                failures.push(format!("N={side}: μ_1 = {mu1:e}, ground state not simple"));
            }
        }
        if let Some(neg) = mus.iter().find(|&&m| m < -1e-10) {
            failures.push(format!("N={side}: negative eigenvalue {neg:e}"));
        }
        let worst = (0..k).map(|n| spec.residual(&gen, n)).fold(0.0, f64::max);
        if worst > 1e-8 {
            failures.push(format!("N={side}: eigen-residual {worst:e} exceeds 1e-8"));
        }
        for (n, mu) in mus.iter().enumerate().take(config.spectrum.eigenvectors.min(k)) {
            let mut buf = Vec::new();
            write_field_csv(
                &mut buf,
                gen.lattice(),
                &config.membrane_label(),
                0.0,
                &[("eigenpair", n.to_string()), ("eigenvalue", format!("{mu:.16e}"))],
                spec.eigenvector(n),
            )?;
            files.push((format!("spectrum_N{side}_F{n}.csv"), String::from_utf8(buf).expect("CSV is UTF-8")));
        }
    }
    finish(config, vec![t], files, failures)
}

/// `N^{−d} Σ |N² 𝕃_N H − ℒ_Λ H|` with its on/off-`Γ_N` maxima.
pub fn cmd_generator_convergence(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut t = table(
        config,
        "generator_convergence",
        &["N"],
        &["residual_total", "residual_offGamma_max", "residual_onGamma_max"],
    );
    let tf = config.test_function()?;
    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    let mut totals = Vec::new();
    for &side in &sizes {
        let gen = SparseGenerator::assemble(&config.rate_field(side)?);
        let b = residual_breakdown(&tf, &gen)?;
        t.push(vec![Key::Int(side as u64)], vec![b.total, b.off_gamma_max, b.on_gamma_max]);
        totals.push((side, b.total));
    }
    let mut failures = Vec::new();
    for w in totals.windows(2) {
        let ((n0, r0), (n1, r1)) = (w[0], w[1]);
        if r1 > r0 || (r1 == r0 && r0 > 0.0) {
            failures.push(format!("residual does not decrease from N={n0} ({r0:e}) to N={n1} ({r1:e})"));
        }
    }
    finish(config, vec![t], Vec::new(), failures)
}

/// Replica mean of `⟨π^N_T, H⟩` against `⟨e_T, H⟩` from the semigroup.
pub fn cmd_hydro(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut t = table(
        config,
        "hydro",
        &["N"],
        &["mean_pairing", "semigroup_pairing", "gap", "std_err", "replica_sd", "gap_over_se"],
    );
    t.meta("replicas", config.replicas.count);
    let tf = config.test_function()?;
    let profile = config.profile.as_ref().expect("validated");
    let horizon = config.horizon;
    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let mut sds: Vec<(usize, f64)> = Vec::new();
    for &side in &sizes {
        let rates = config.rate_field(side)?;
        let lattice = *rates.lattice();
        let gen = SparseGenerator::assemble(&rates);
        let h = tf.sample(&lattice)?;
        let p0 = profile.sample(&lattice)?;
        let e_t = evolve_density(&gen, &DensityField::new(p0.clone()), horizon)?;
        let semigroup = e_t.values.iter().zip(&h).map(|(e, hx)| e * hx).sum::<f64>() / volume(&rates);

        let dynamics = Dynamics::new(&rates);
        let opts = RunOptions {
            horizon,
            sample_times: vec![horizon],
            pairing_fields: vec![h],
            ..RunOptions::default()
        };
        let plan = ReplicaPlan::new(config.replicas.count, cell_seed(config.replicas.seed, side));
        let pairings = plan
            .map(|_, rng| {
                let c0 = sample_from_densities(&p0, rng);
                dynamics.run(c0, &opts, rng).map(|out| out.series.values[0][0])
            })
            .into_iter()
            .collect::<Result<Vec<f64>, _>>()?;
        let (mean, se) = mean_and_se(&pairings);
        let sd = sample_sd(&pairings);
        let gap = (mean - semigroup).abs();
        let ratio = if se > 0.0 { gap / se } else if gap <= 1e-12 { 0.0 } else { f64::INFINITY };
        if ratio > 4.0 {
            failures.push(format!("N={side}: |mean − semigroup| = {gap:e} exceeds 4 standard errors ({se:e})"));
        }
        t.push(vec![Key::Int(side as u64)], vec![mean, semigroup, gap, se, sd, ratio.min(f64::MAX)]);
        sds.push((side, sd));

        let mut buf = Vec::new();
        write_field_csv(&mut buf, &lattice, &config.membrane_label(), horizon, &[], &e_t.values)?;
        files.push((format!("density_N{side}.csv"), String::from_utf8(buf).expect("CSV is UTF-8")));
    }
    // SD of the pairing scales like N^{−d/2}; the ratio of two sample SDs
    // has relative standard error about sqrt(2) / sqrt(2 (R − 1))
    let rel_se = (1.0 / (config.replicas.count as f64 - 1.0)).sqrt();
    for w in sds.windows(2) {
        let ((n0, s0), (n1, s1)) = (w[0], w[1]);
        if n1 == n0 || s0 == 0.0 {
            continue;
        }
        let expected = (n0 as f64 / n1 as f64).powf(config.dim as f64 / 2.0);
        let limit = expected * (1.0 + 4.0 * rel_se);
        if s1 / s0 > limit {
            failures.push(format!("replica SD ratio {:.4} from N={n0} to N={n1} exceeds {limit:.4}", s1 / s0));
        }
    }
    finish(config, vec![t], files, failures)
}

/// Quadratic variation of the Dynkin martingale against `(T d / N^d) max_j sup|∂_j H|²`,
/// and the replica mean of `M_T`.
pub fn cmd_qv(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut per = table(config, "qv", &["N", "replica"], &["qv", "bound", "martingale"]);
    let mut summary = table(
        config,
        "qv_summary",
        &["N"],
        &["bound", "qv_max", "martingale_mean", "martingale_se", "replicas"],
    );
    let tf = config.test_function()?;
    let profile = config.profile.as_ref().expect("validated");
    let horizon = config.horizon;
    let mut failures = Vec::new();
    for &side in &config.sizes {
        let rates = config.rate_field(side)?;
        let lattice = *rates.lattice();
        let gen = SparseGenerator::assemble(&rates);
        let h = tf.sample(&lattice)?;
        let scale = (side * side) as f64;
        let lh: Vec<f64> = gen.apply(&h)?.iter().map(|v| scale * v).collect();
        let sup = tf.gradient_bounds().into_iter().fold(0.0, f64::max);
        let bound = horizon * config.dim as f64 / volume(&rates) * sup * sup;
        let p0 = profile.sample(&lattice)?;

        let dynamics = Dynamics::new(&rates);
        let base = RunOptions {
            horizon,
            sample_times: vec![0.0, horizon],
            pairing_fields: vec![h.clone()],
            integral_fields: vec![lh],
            ..RunOptions::default()
        };
        let logged = RunOptions { log_events: true, ..base.clone() };
        let trajectories = config.qv.trajectories;
        let plan = ReplicaPlan::new(config.replicas.count.max(trajectories), cell_seed(config.replicas.seed, side));
        let results = plan
            .map(|i, rng| -> Result<(f64, Option<f64>), HarnessError> {
                let c0 = sample_from_densities(&p0, rng);
                let opts = if i < trajectories { &logged } else { &base };
                let out = dynamics.run(c0, opts, rng)?;
                let m = out.series.values[1][0] - out.series.values[0][0] - out.integrals[0];
                let qv = match &out.log {
                    Some(log) => Some(qv_estimate(log, &h, &rates, horizon)?),
                    None => None,
                };
                Ok((m, qv))
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let martingales: Vec<f64> = results.iter().map(|r| r.0).collect();
        let (mean, se) = mean_and_se(&martingales);
        let mut qv_max: f64 = 0.0;
        for (i, (m, qv)) in results.iter().enumerate() {
            if let Some(q) = qv {
                qv_max = qv_max.max(*q);
                per.push(vec![Key::Int(side as u64), Key::Int(i as u64)], vec![*q, bound, *m]);
                if *q > bound {
                    failures.push(format!("N={side}, replica {i}: QV {q:e} exceeds bound {bound:e}"));
                }
            }
        }
        let off = if se > 0.0 { mean.abs() > 4.0 * se } else { mean.abs() > 1e-12 };
        if off {
            failures.push(format!("N={side}: martingale mean {mean:e} is more than 4 standard errors ({se:e}) from 0"));
        }
        summary.push(
            vec![Key::Int(side as u64)],
            vec![bound, qv_max, mean, se, martingales.len() as f64],
        );
    }
    finish(config, vec![per, summary], Vec::new(), failures)
}

/// Spectral versus Crank–Nicolson evolution, the zero solution and the
/// series `R(t) = Σ_n c_n(t)² / ((n+1)² (1 + μ_n))`.
///
/// The weights use `n + 1` so that the constant mode `n = 0` is included.
pub fn cmd_uniqueness_demo(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let mut t = table(
        config,
        "uniqueness",
        &["N", "time"],
        &["method_gap", "zero_norm", "r_value", "coefficient_decay_error", "cn_steps"],
    );
    let horizon = config.horizon;
    let grid = config.uniqueness.grid_points;
    let mut failures = Vec::new();
    for &side in &config.sizes {
        let rates = config.rate_field(side)?;
        let lattice = *rates.lattice();
        let gen = SparseGenerator::assemble(&rates);
        if gen.sites() > DENSE_CUTOFF {
            return Err(HarnessError::Config(format!(
                "uniqueness needs a full spectrum; N={side} has {} sites (limit {DENSE_CUTOFF})",
                gen.sites()
            )));
        }
        let e0 = if config.uniqueness.random_initial {
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(config.replicas.seed, side));
            DensityField::new((0..lattice.sites()).map(|_| rng.random::<f64>()).collect())
        } else {
            DensityField::new(config.profile.as_ref().expect("validated").sample(&lattice)?)
        };
        let zero = DensityField::constant(lattice.sites(), 0.0);
        let prop = SpectralPropagator::new(&gen)?;
        let mus = prop.spectrum().eigenvalues().to_vec();
        let scale = (side * side) as f64;
        let c0 = prop.coefficients(&e0.values, 0.0)?;
        let mut prev_r: Option<f64> = None;
        let r_tol = 1e-14;
        for k in 0..=grid {
            let time = horizon * k as f64 / grid as f64;
            let spectral = prop.evolve(&e0, time)?;
            let cn = crank_nicolson(&gen, &e0, time)?;
            let gap = max_abs_diff(&spectral.values, &cn.field.values);
            let zero_norm = prop
                .evolve(&zero, time)?
                .values
                .iter()
                .chain(&crank_nicolson(&gen, &zero, time)?.field.values)
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let c_t = prop.coefficients(&e0.values, time)?;
            let r: f64 = c_t
                .iter()
                .zip(&mus)
                .enumerate()
                .map(|(n, (c, mu))| c * c / (((n + 1) * (n + 1)) as f64 * (1.0 + mu)))
                .sum();
            let c_cn = spectral_coefficients(prop.spectrum(), &cn.field.values)?;
            let decay_err = c_cn
                .iter()
                .zip(c0.iter().zip(&mus))
                .map(|(c, (a, mu))| (c - a * (-mu * scale * time).exp()).abs())
                .fold(0.0, f64::max);
            if gap > 1e-6 {
                failures.push(format!("N={side}, t={time}: spectral and Crank–Nicolson differ by {gap:e}"));
            }
            if zero_norm > 1e-12 {
                failures.push(format!("N={side}, t={time}: zero data evolved to max norm {zero_norm:e}"));
            }
            if decay_err > 1e-6 {
                failures.push(format!("N={side}, t={time}: coefficient decay error {decay_err:e}"));
            }
            if let Some(p) = prev_r {
                if r > p + r_tol * p.max(1.0) {
                    failures.push(format!("N={side}, t={time}: R increased from {p:e} to {r:e}"));
                }
            }
            prev_r = Some(r);
            t.push(
                vec![Key::Int(side as u64), Key::Real(time)],
                vec![gap, zero_norm, r, decay_err, cn.steps as f64],
            );
        }
    }
    finish(config, vec![t], Vec::new(), failures)
}
