use super::spectrum::{spectrum_with, Spectrum, SpectrumMethod};
use super::{GeneratorError, SparseGenerator, DENSE_CUTOFF};
use crate::linalg::{axpy, conjugate_gradient, max_abs_diff};

/// Step doubling stops once the max-norm change drops below this.
pub const CN_HALVING_TOL: f64 = 1e-8;
const CN_INITIAL_STEPS: usize = 16;
const CN_MAX_STEPS: usize = 1 << 22;
const PHYSICAL_SLACK: f64 = 1e-9;

/// Expected occupation per site.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(values: Vec<f64>) -> Self {
        DensityField { values }
    }

    pub fn constant(sites: usize, alpha: f64) -> Self {
        DensityField { values: vec![alpha; sites] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass() / self.values.len() as f64
    }

    /// Largest distance of any entry outside `[0, 1]`.
    pub fn excursion(&self) -> f64 {
        self.values.iter().map(|&v| (-v).max(v - 1.0).max(0.0)).fold(0.0, f64::max)
    }

    pub fn is_physical(&self) -> bool {
        self.excursion() <= PHYSICAL_SLACK
    }

    /// Values clamped to `[0, 1]`, together with the excursion flag.
    pub fn clamped(&self) -> (Vec<f64>, bool) {
        (self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(), !self.is_physical())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMethod {
    /// Spectral up to [`DENSE_CUTOFF`] sites, Crank–Nicolson beyond.
    Auto,
    Spectral,
    CrankNicolson,
}

/// `exp(t N² 𝕃_N)` through a cached complete spectrum.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    spectrum: Spectrum,
    scale: f64,
}

impl SpectralPropagator {
    pub fn new(gen: &SparseGenerator) -> Result<Self, GeneratorError> {
        let spectrum = spectrum_with(gen, gen.sites(), SpectrumMethod::Dense)?;
        let side = gen.lattice().side() as f64;
        Ok(SpectralPropagator { spectrum, scale: side * side })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Spectral coefficients of `e` evolved to time `t`.
    pub fn coefficients(&self, e0: &[f64], t: f64) -> Result<Vec<f64>, GeneratorError> {
        check_time(t)?;
        let c0 = super::spectral_coefficients(&self.spectrum, e0)?;
        Ok(c0
            .iter()
            .zip(self.spectrum.eigenvalues())
            .map(|(c, mu)| if t == 0.0 { *c } else { c * (-mu * self.scale * t).exp() })
            .collect())
    }

    pub fn evolve(&self, e0: &DensityField, t: f64) -> Result<DensityField, GeneratorError> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(e0.clone());
        }
        let c = self.coefficients(&e0.values, t)?;
        let mut out = vec![0.0; e0.len()];
        for (k, ck) in c.iter().enumerate() {
            if *ck != 0.0 {
                axpy(*ck, self.spectrum.eigenvector(k), &mut out);
            }
        }
        Ok(DensityField { values: out })
    }
}

#[derive(Debug, Clone)]
pub struct CrankNicolsonRun {
    pub field: DensityField,
    pub steps: usize,
    /// max-norm change between the last two step counts
    pub halving_change: f64,
}

/// Crank–Nicolson for `d/dt e = N² 𝕃_N e` with step doubling until the
/// change drops below [`CN_HALVING_TOL`].
///
/// The first step is replaced by two backward-Euler half steps so that the
/// stiff modes of a rough initial profile are damped rather than carried
/// along with alternating sign.
pub fn crank_nicolson(gen: &SparseGenerator, e0: &DensityField, t: f64) -> Result<CrankNicolsonRun, GeneratorError> {
    check_time(t)?;
    check_len(gen, e0)?;
    if t == 0.0 {
        return Ok(CrankNicolsonRun { field: e0.clone(), steps: 0, halving_change: 0.0 });
    }
    let mut steps = CN_INITIAL_STEPS;
    let mut prev = cn_fixed(gen, &e0.values, t, steps)?;
    while steps < CN_MAX_STEPS {
        steps *= 2;
        let next = cn_fixed(gen, &e0.values, t, steps)?;
        let change = max_abs_diff(&prev, &next);
        if change < CN_HALVING_TOL {
            return Ok(CrankNicolsonRun { field: DensityField { values: next }, steps, halving_change: change });
        }
        prev = next;
    }
    Err(GeneratorError::SolverNonConvergence(format!(
        "Crank–Nicolson step halving did not settle below {CN_HALVING_TOL:e} within {CN_MAX_STEPS} steps"
    )))
}

fn cn_fixed(gen: &SparseGenerator, e0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>, GeneratorError> {
    let side = gen.lattice().side() as f64;
    let a = side * side;
    let n = e0.len();
    let dt = t / steps as f64;
    let mut u = e0.to_vec();
    let mut rhs = vec![0.0; n];
    let mut lu = vec![0.0; n];

    // (I − θ dt A) u_new = rhs, SPD for θ dt > 0
    let solve = |theta_dt: f64, rhs: &[f64], u: &mut [f64]| -> Result<(), GeneratorError> {
        let op = |v: &[f64], out: &mut [f64]| {
            gen.apply_into(v, out);
            out.iter_mut().zip(v).for_each(|(o, vi)| *o = vi - theta_dt * a * *o);
        };
        let out = conjugate_gradient(op, rhs, u, 1e-14, 10 * n + 100);
        if !out.converged && out.residual > 1e-12 * crate::linalg::norm(rhs).max(1.0) {
            return Err(GeneratorError::SolverNonConvergence(format!(
                "Crank–Nicolson linear solve stalled at residual {:e}",
                out.residual
            )));
        }
        Ok(())
    };

    // two backward-Euler half steps
    for _ in 0..2 {
        rhs.copy_from_slice(&u);
        solve(0.5 * dt, &rhs, &mut u)?;
    }
    for _ in 1..steps {
        gen.apply_into(&u, &mut lu);
        rhs.iter_mut().zip(u.iter().zip(&lu)).for_each(|(r, (ui, li))| *r = ui + 0.5 * dt * a * li);
        solve(0.5 * dt, &rhs, &mut u)?;
    }
    Ok(u)
}

/// `exp(t N² 𝕃_N) e0` by the method [`EvolutionMethod::Auto`] selects.
pub fn evolve_density(gen: &SparseGenerator, e0: &DensityField, t: f64) -> Result<DensityField, GeneratorError> {
    evolve_density_with(gen, e0, t, EvolutionMethod::Auto)
}

pub fn evolve_density_with(
    gen: &SparseGenerator,
    e0: &DensityField,
    t: f64,
    method: EvolutionMethod,
) -> Result<DensityField, GeneratorError> {
    check_time(t)?;
    check_len(gen, e0)?;
    if t == 0.0 {
        return Ok(e0.clone());
    }
    let spectral = match method {
        EvolutionMethod::Auto => gen.sites() <= DENSE_CUTOFF,
        EvolutionMethod::Spectral => true,
        EvolutionMethod::CrankNicolson => false,
    };
    if spectral {
        SpectralPropagator::new(gen)?.evolve(e0, t)
    } else {
        Ok(crank_nicolson(gen, e0, t)?.field)
    }
}

fn check_time(t: f64) -> Result<(), GeneratorError> {
    if t < 0.0 || t.is_nan() {
        return Err(GeneratorError::NegativeTime(t));
    }
    Ok(())
}

fn check_len(gen: &SparseGenerator, e0: &DensityField) -> Result<(), GeneratorError> {
    if e0.len() != gen.sites() {
        return Err(GeneratorError::DimensionMismatch { expected: gen.sites(), got: e0.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Membrane;
    use crate::linalg::dot;
    use crate::lattice::{RateField, TorusLattice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_slow_ring(n: usize) -> SparseGenerator {
        let lattice = TorusLattice::new(1, n).unwrap();
        let mut rates = vec![1.0; n];
        rates[n - 1] = 1.0 / n as f64;
        SparseGenerator::assemble(&RateField::from_rates(lattice, rates).unwrap())
    }

    fn circle(n: usize) -> SparseGenerator {
        let lattice = TorusLattice::new(2, n).unwrap();
        SparseGenerator::assemble(
            &RateField::build(lattice, &Membrane::ball(vec![0.5, 0.5], 0.25).unwrap()).unwrap(),
        )
    }

    fn step(n: usize) -> DensityField {
        DensityField::new((0..n).map(|i| if i < n / 2 { 0.9 } else { 0.1 }).collect())
    }

    #[test]
    fn time_zero_is_identity() {
        let gen = one_slow_ring(8);
        let e0 = step(8);
        for m in [EvolutionMethod::Spectral, EvolutionMethod::CrankNicolson] {
            assert_eq!(evolve_density_with(&gen, &e0, 0.0, m).unwrap(), e0);
        }
    }

    #[test]
    fn constants_are_stationary() {
        let gen = circle(8);
        let e0 = DensityField::constant(gen.sites(), 0.3);
        for m in [EvolutionMethod::Spectral, EvolutionMethod::CrankNicolson] {
            let e = evolve_density_with(&gen, &e0, 0.7, m).unwrap();
            assert!(e.values.iter().all(|v| (v - 0.3).abs() < 1e-9));
        }
    }

    #[test]
    fn spectral_and_crank_nicolson_agree() {
        let gen = one_slow_ring(8);
        let e0 = step(8);
        let a = evolve_density_with(&gen, &e0, 0.05, EvolutionMethod::Spectral).unwrap();
        let b = evolve_density_with(&gen, &e0, 0.05, EvolutionMethod::CrankNicolson).unwrap();
        assert!(max_abs_diff(&a.values, &b.values) < 1e-6);

        let gen = circle(12);
        let e0 = DensityField::new((0..gen.sites()).map(|i| ((i * 37) % 11) as f64 / 10.0).collect());
        let a = evolve_density_with(&gen, &e0, 0.01, EvolutionMethod::Spectral).unwrap();
        let run = crank_nicolson(&gen, &e0, 0.01).unwrap();
        assert!(run.halving_change < CN_HALVING_TOL);
        assert!(max_abs_diff(&a.values, &run.field.values) < 1e-6);
    }

    #[test]
    fn semigroup_property() {
        let gen = circle(8);
        let prop = SpectralPropagator::new(&gen).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let e0 = DensityField::new((0..gen.sites()).map(|_| rng.random::<f64>()).collect());
            let (s, t) = (rng.random_range(0.0..0.05), rng.random_range(0.0..0.05));
            let two = prop.evolve(&prop.evolve(&e0, s).unwrap(), t).unwrap();
            let one = prop.evolve(&e0, s + t).unwrap();
            assert!(max_abs_diff(&two.values, &one.values) < 1e-7);
        }
    }

    #[test]
    fn maximum_principle_and_mass_conservation() {
        let gen = circle(8);
        let prop = SpectralPropagator::new(&gen).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let e0 = DensityField::new((0..gen.sites()).map(|_| rng.random::<f64>()).collect());
            for t in [1e-4, 1e-2, 0.3] {
                let e = prop.evolve(&e0, t).unwrap();
                assert!(e.is_physical(), "excursion {}", e.excursion());
                assert!((e.mass() - e0.mass()).abs() <= 1e-9 * e0.mass());
            }
            let cn = crank_nicolson(&gen, &e0, 0.02).unwrap().field;
            assert!(cn.is_physical());
            assert!((cn.mass() - e0.mass()).abs() <= 1e-9 * e0.mass());
        }
    }

    #[test]
    fn coefficients_decay_exponentially() {
        let gen = one_slow_ring(8);
        let prop = SpectralPropagator::new(&gen).unwrap();
        let e0 = step(8);
        let t = 0.03;
        let et = evolve_density_with(&gen, &e0, t, EvolutionMethod::CrankNicolson).unwrap();
        let c0 = super::super::spectral_coefficients(prop.spectrum(), &e0.values).unwrap();
        let ct = super::super::spectral_coefficients(prop.spectrum(), &et.values).unwrap();
        for ((a, b), mu) in c0.iter().zip(&ct).zip(prop.spectrum().eigenvalues()) {
            assert!((a * (-mu * 64.0 * t).exp() - b).abs() < 1e-6);
        }
        let zero = prop.coefficients(&[0.0; 8], 0.5).unwrap();
        assert!(zero.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn poincare_inequality() {
        let gen = circle(8);
        let spec = spectrum_with(&gen, 2, SpectrumMethod::Dense).unwrap();
        let mu1 = spec.spectral_gap().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = gen.sites() as f64;
        for _ in 0..100 {
            let mut h: Vec<f64> = (0..gen.sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = h.iter().sum::<f64>() / n;
            h.iter_mut().for_each(|v| *v -= mean);
            let var = dot(&h, &h) / n;
            let energy = gen.dirichlet_form(&h).unwrap() / n;
            assert!(var <= (1.0 / mu1 + 1e-9) * energy);
        }
    }

    #[test]
    fn rejects_negative_time() {
        let gen = one_slow_ring(4);
        assert!(matches!(
            evolve_density(&gen, &DensityField::constant(4, 0.5), -1.0),
            Err(GeneratorError::NegativeTime(_))
        ));
    }

    #[test]
    fn physical_flag() {
        let e = DensityField::new(vec![0.0, 1.0 + 1e-10, -2e-9]);
        assert!(!e.is_physical());
        let (clamped, flagged) = e.clamped();
        assert!(flagged);
        assert_eq!(clamped, vec![0.0, 1.0, 0.0]);
    }
}
