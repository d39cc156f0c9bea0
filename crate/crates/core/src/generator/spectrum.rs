use faer::Side;

use super::{GeneratorError, SparseGenerator, DENSE_CUTOFF};
use crate::linalg::{axpy, conjugate_gradient, dot, norm, splitmix64};

/// Residual target for the iterative solver, `‖(−𝕃)F − μF‖`.
const ITERATIVE_RESIDUAL_TOL: f64 = 1e-10;
const ITERATIVE_MAX_SWEEPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMethod {
    /// Dense when the lattice has at most [`DENSE_CUTOFF`] sites.
    Auto,
    Dense,
    /// Shift-invert block subspace iteration with Rayleigh–Ritz.
    Iterative,
}

/// Smallest eigenpairs of `−𝕃_N`, eigenvalues nondecreasing, eigenvectors
/// orthonormal in the Euclidean inner product on sites.
#[derive(Debug, Clone)]
pub struct Spectrum {
    sites: usize,
    eigenvalues: Vec<f64>,
    /// column-major: eigenvector `k` occupies `vectors[k * sites..(k + 1) * sites]`
    vectors: Vec<f64>,
}

impl Spectrum {
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.len() == self.sites
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.sites..(k + 1) * self.sites]
    }

    /// `μ_1`, the smallest eigenvalue after the ground state.
    pub fn spectral_gap(&self) -> Option<f64> {
        self.eigenvalues.get(1).copied()
    }

    /// `‖(−𝕃_N) F_k − μ_k F_k‖₂`.
    pub fn residual(&self, gen: &SparseGenerator, k: usize) -> f64 {
        let v = self.eigenvector(k);
        let mut lv = vec![0.0; self.sites];
        gen.apply_into(v, &mut lv);
        let mu = self.eigenvalues[k];
        lv.iter().zip(v).map(|(a, b)| (-a - mu * b).powi(2)).sum::<f64>().sqrt()
    }

    /// Largest `|⟨F_i, F_j⟩ − δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..=i {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.eigenvector(i), self.eigenvector(j)) - target).abs());
            }
        }
        worst
    }
}

/// `k` smallest eigenpairs of `−𝕃_N`.
pub fn spectrum(gen: &SparseGenerator, k: usize) -> Result<Spectrum, GeneratorError> {
    spectrum_with(gen, k, SpectrumMethod::Auto)
}

pub fn spectrum_with(gen: &SparseGenerator, k: usize, method: SpectrumMethod) -> Result<Spectrum, GeneratorError> {
    let sites = gen.sites();
    if k > sites {
        return Err(GeneratorError::TooManyEigenpairs { requested: k, sites });
    }
    let method = match method {
        SpectrumMethod::Auto if sites <= DENSE_CUTOFF => SpectrumMethod::Dense,
        SpectrumMethod::Auto => SpectrumMethod::Iterative,
        other => other,
    };
    let mut spec = match method {
        SpectrumMethod::Dense => dense(gen, k)?,
        _ => subspace_iteration(gen, k)?,
    };
    fix_signs(&mut spec);
    Ok(spec)
}

/// `c_n = ⟨e, F_n⟩` for a complete spectrum.
pub fn spectral_coefficients(spec: &Spectrum, e: &[f64]) -> Result<Vec<f64>, GeneratorError> {
    if !spec.is_complete() {
        return Err(GeneratorError::IncompleteSpectrum { have: spec.len(), sites: spec.sites });
    }
    if e.len() != spec.sites {
        return Err(GeneratorError::DimensionMismatch { expected: spec.sites, got: e.len() });
    }
    Ok((0..spec.len()).map(|k| dot(spec.eigenvector(k), e)).collect())
}

fn dense(gen: &SparseGenerator, k: usize) -> Result<Spectrum, GeneratorError> {
    let sites = gen.sites();
    if sites > DENSE_CUTOFF {
        return Err(GeneratorError::TooLargeForDense { sites, limit: DENSE_CUTOFF });
    }
    let evd = gen
        .negated_dense()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| GeneratorError::SolverNonConvergence(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..sites).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut eigenvalues = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k * sites);
    for &col in order.iter().take(k) {
        eigenvalues.push(s[col]);
        vectors.extend((0..sites).map(|row| u[(row, col)]));
    }
    Ok(Spectrum { sites, eigenvalues, vectors })
}

/// Deterministic sign: the entry of largest magnitude (first on ties) is
/// made positive.
fn fix_signs(spec: &mut Spectrum) {
    let sites = spec.sites;
    for k in 0..spec.len() {
        let v = &mut spec.vectors[k * sites..(k + 1) * sites];
        let mut best = 0;
        for i in 1..sites {
            if v[i].abs() > v[best].abs() + 1e-12 {
                best = i;
            }
        }
        if v[best] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Block inverse iteration on `(−𝕃 + σI)^{-1}` with Rayleigh–Ritz on `−𝕃`.
///
/// A block wider than `k` handles the repeated eigenvalues of symmetric
/// lattices, which single-vector Krylov methods cannot resolve.
fn subspace_iteration(gen: &SparseGenerator, k: usize) -> Result<Spectrum, GeneratorError> {
    let n = gen.sites();
    if k == 0 {
        return Ok(Spectrum { sites: n, eigenvalues: Vec::new(), vectors: Vec::new() });
    }
    let block = (2 * k + 8).min(n);
    let side = gen.lattice().side() as f64;
    let shift = 1.0 / (side * side);

    let neg_apply = |v: &[f64], out: &mut [f64]| {
        gen.apply_into(v, out);
        out.iter_mut().for_each(|x| *x = -*x);
    };
    let shifted = |v: &[f64], out: &mut [f64]| {
        neg_apply(v, out);
        axpy(shift, v, out);
    };

    let mut state = 0x5EED_0F5A_u64 ^ n as u64;
    let mut basis: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 - 0.5).collect())
        .collect();
    orthonormalize(&mut basis)?;

    let mut scratch = vec![0.0; n];
    for _sweep in 0..ITERATIVE_MAX_SWEEPS {
        // Rayleigh–Ritz on the current block
        let images: Vec<Vec<f64>> = basis
            .iter()
            .map(|v| {
                let mut out = vec![0.0; n];
                neg_apply(v, &mut out);
                out
            })
            .collect();
        let gram = faer::Mat::<f64>::from_fn(block, block, |i, j| 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i])));
        let evd = gram
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| GeneratorError::SolverNonConvergence(format!("{e:?}")))?;
        let theta = evd.S().column_vector();
        let coeffs = evd.U();
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
        let rotate = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            order
                .iter()
                .map(|&c| {
                    let mut out = vec![0.0; n];
                    for (r, v) in vs.iter().enumerate() {
                        axpy(coeffs[(r, c)], v, &mut out);
                    }
                    out
                })
                .collect()
        };
        basis = rotate(&basis);
        let images = rotate(&images);
        let values: Vec<f64> = order.iter().map(|&c| theta[c]).collect();

        let converged = (0..k).all(|i| {
            let r: f64 = images[i]
                .iter()
                .zip(&basis[i])
                .map(|(a, b)| (a - values[i] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            r <= ITERATIVE_RESIDUAL_TOL
        });
        if converged {
            let mut vectors = Vec::with_capacity(k * n);
            for v in basis.iter().take(k) {
                vectors.extend_from_slice(v);
            }
            return Ok(Spectrum { sites: n, eigenvalues: values[..k].to_vec(), vectors });
        }

        // one inverse-iteration sweep
        for v in basis.iter_mut() {
            scratch.copy_from_slice(v);
            let guess: Vec<f64> = v.iter().map(|x| x / shift.max(1e-300)).collect();
            v.copy_from_slice(&guess);
            let out = conjugate_gradient(shifted, &scratch, v, 1e-13, 20 * n);
            if !out.converged {
                return Err(GeneratorError::SolverNonConvergence(format!(
                    "inner CG stalled at residual {:e}",
                    out.residual
                )));
            }
        }
        orthonormalize(&mut basis)?;
    }
    Err(GeneratorError::SolverNonConvergence(format!(
        "subspace iteration exceeded {ITERATIVE_MAX_SWEEPS} sweeps"
    )))
}

/// Modified Gram–Schmidt, applied twice.
fn orthonormalize(vs: &mut [Vec<f64>]) -> Result<(), GeneratorError> {
    for _ in 0..2 {
        for i in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let c = dot(u, v);
                axpy(-c, u, v);
            }
            let len = norm(v);
            if !(len > 1e-300) {
                return Err(GeneratorError::SolverNonConvergence("block lost rank".into()));
            }
            v.iter_mut().for_each(|x| *x /= len);
        }
    }
    Ok(())
}
