//! The single-particle generator `𝕃_N` as a symmetric sparse matrix.
//!
//! Off-diagonal entries are the bond rates, the diagonal is minus the sum of
//! the incident rates, so constants are annihilated and `−𝕃_N` is a weighted
//! graph Laplacian. Spectra and semigroup evolution live in the submodules.

mod evolve;
mod spectrum;

use std::io::Write;

use faer::Mat;
use thiserror::Error;

use crate::lattice::{Direction, RateField, TorusLattice};

pub use evolve::{
    crank_nicolson, evolve_density, evolve_density_with, CrankNicolsonRun, DensityField, EvolutionMethod,
    SpectralPropagator, CN_HALVING_TOL,
};
pub use spectrum::{spectral_coefficients, spectrum, spectrum_with, Spectrum, SpectrumMethod};

/// Lattices up to this many sites use dense eigendecomposition.
pub const DENSE_CUTOFF: usize = 4096;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("field has {got} entries, lattice has {expected} sites")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("requested {requested} eigenpairs from a lattice with {sites} sites")]
    TooManyEigenpairs { requested: usize, sites: usize },
    #[error("dense eigendecomposition is limited to {limit} sites, lattice has {sites}")]
    TooLargeForDense { sites: usize, limit: usize },
    #[error("eigensolver did not converge: {0}")]
    SolverNonConvergence(String),
    #[error("spectrum holds {have} of {sites} eigenpairs; a complete spectrum is required")]
    IncompleteSpectrum { have: usize, sites: usize },
    #[error("evolution time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SparseGenerator {
    lattice: TorusLattice,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    membrane_label: Option<String>,
}

impl SparseGenerator {
    /// `(𝕃_N H)(x) = Σ_j ξ_{x,x+e_j}[H(x+e_j) − H(x)] + ξ_{x,x−e_j}[H(x−e_j) − H(x)]`.
    pub fn assemble(rates: &RateField) -> Self {
        let lattice = *rates.lattice();
        let n = lattice.sites();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n * (2 * lattice.dim() + 1));
        let mut vals = Vec::with_capacity(cols.capacity());
        row_ptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * lattice.dim() + 1);
        for x in 0..n {
            row.clear();
            for axis in 0..lattice.dim() {
                for dir in [Direction::Forward, Direction::Backward] {
                    let y = lattice.neighbor(x, axis, dir);
                    row.push((y, rates.rate_from(x, axis, dir)));
                }
            }
            // the diagonal is minus the same sum, taken in the same order,
            // so every row sums to zero exactly
            let total: f64 = row.iter().map(|(_, r)| r).sum();
            row.push((x, -total));
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                // tiny lattices (N = 2) can list the same neighbour twice
                if cols.len() > row_ptr[x] && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseGenerator {
            lattice,
            row_ptr,
            cols,
            vals,
            membrane_label: rates.membrane_label().map(str::to_string),
        }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn sites(&self) -> usize {
        self.lattice.sites()
    }

    pub fn membrane_label(&self) -> Option<&str> {
        self.membrane_label.as_deref()
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[x], self.row_ptr[x + 1]);
        match self.cols[lo..hi].binary_search(&y) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Non-zero entries of row `x` as `(column, value)`.
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[x], self.row_ptr[x + 1]);
        self.cols[lo..hi].iter().copied().zip(self.vals[lo..hi].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>, GeneratorError> {
        self.check_len(h)?;
        let mut out = vec![0.0; h.len()];
        self.apply_into(h, &mut out);
        Ok(out)
    }

    /// `out = 𝕃_N h`; both slices must have `sites()` entries.
    ///
    /// Evaluated as `Σ_y ξ_{x,y} (h(y) − h(x))` so constants map to exact zeros.
    pub fn apply_into(&self, h: &[f64], out: &mut [f64]) {
        for (x, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[x], self.row_ptr[x + 1]);
            let hx = h[x];
            *o = self.cols[lo..hi]
                .iter()
                .zip(&self.vals[lo..hi])
                .filter(|(&c, _)| c != x)
                .map(|(&c, v)| v * (h[c] - hx))
                .sum();
        }
    }

    /// `⟨h, −𝕃_N h⟩ = Σ_bonds ξ (h(y) − h(x))²`.
    pub fn dirichlet_form(&self, h: &[f64]) -> Result<f64, GeneratorError> {
        let lh = self.apply(h)?;
        Ok(-crate::linalg::dot(h, &lh))
    }

    fn check_len(&self, h: &[f64]) -> Result<(), GeneratorError> {
        if h.len() != self.sites() {
            return Err(GeneratorError::DimensionMismatch { expected: self.sites(), got: h.len() });
        }
        Ok(())
    }

    /// Dense copy of `−𝕃_N`.
    pub(crate) fn negated_dense(&self) -> Mat<f64> {
        let n = self.sites();
        let mut m = Mat::<f64>::zeros(n, n);
        for x in 0..n {
            for (c, v) in self.row(x) {
                m[(x, c)] = -v;
            }
        }
        m
    }
}

/// Writes a per-site field as CSV `site,value`, preceded by `#` metadata
/// lines (`N`, `d`, `membrane`, `time` and any extras).
pub fn write_field_csv<W: Write>(
    mut out: W,
    lattice: &TorusLattice,
    membrane: &str,
    time: f64,
    extra: &[(&str, String)],
    values: &[f64],
) -> std::io::Result<()> {
    writeln!(out, "# N: {}", lattice.side())?;
    writeln!(out, "# d: {}", lattice.dim())?;
    writeln!(out, "# membrane: {membrane}")?;
    writeln!(out, "# time: {time:.16e}")?;
    for (k, v) in extra {
        writeln!(out, "# {k}: {v}")?;
    }
    writeln!(out, "site,value")?;
    for (site, v) in values.iter().enumerate() {
        writeln!(out, "{site},{v:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Membrane;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn homogeneous_ring(n: usize) -> SparseGenerator {
        SparseGenerator::assemble(&RateField::homogeneous(TorusLattice::new(1, n).unwrap()))
    }

    #[test]
    fn constants_are_annihilated() {
        let gen = SparseGenerator::assemble(
            &RateField::build(TorusLattice::new(2, 16).unwrap(), &Membrane::ball(vec![0.5, 0.5], 0.25).unwrap())
                .unwrap(),
        );
        let out = gen.apply(&vec![3.7; gen.sites()]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn indicator_gives_laplacian_row() {
        let gen = homogeneous_ring(4);
        let out = gen.apply(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_hand_assembled_matrix_with_one_slow_bond() {
        let lattice = TorusLattice::new(1, 4).unwrap();
        // bond (3, 0) is canonical bond 3
        let rates = RateField::from_rates(lattice, vec![1.0, 1.0, 1.0, 0.25]).unwrap();
        let gen = SparseGenerator::assemble(&rates);
        let expected = [
            [-1.25, 1.0, 0.0, 0.25],
            [1.0, -2.0, 1.0, 0.0],
            [0.0, 1.0, -2.0, 1.0],
            [0.25, 0.0, 1.0, -1.25],
        ];
        for (x, row) in expected.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                assert_eq!(gen.entry(x, y), *v, "entry ({x}, {y})");
            }
        }
    }

    #[test]
    fn symmetric_rows_sum_to_zero_and_sign_pattern() {
        let lattice = TorusLattice::new(2, 16).unwrap();
        let rates = RateField::build(lattice, &Membrane::ellipsoid(vec![0.4, 0.55], vec![0.3, 0.2]).unwrap()).unwrap();
        let gen = SparseGenerator::assemble(&rates);
        for x in 0..gen.sites() {
            let mut sum = 0.0;
            for (y, v) in gen.row(x) {
                assert_eq!(v, gen.entry(y, x));
                if y == x {
                    assert!(v <= 0.0);
                } else {
                    assert!(v >= 0.0);
                }
                sum += v;
            }
            assert!(sum.abs() <= 1e-12);
        }
    }

    #[test]
    fn apply_is_linear_and_dissipative() {
        let lattice = TorusLattice::new(2, 8).unwrap();
        let rates = RateField::build(lattice, &Membrane::ball(vec![0.5, 0.5], 0.25).unwrap()).unwrap();
        let gen = SparseGenerator::assemble(&rates);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let h1: Vec<f64> = (0..gen.sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h2: Vec<f64> = (0..gen.sites()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let combo: Vec<f64> = h1.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
            let lhs = gen.apply(&combo).unwrap();
            let (l1, l2) = (gen.apply(&h1).unwrap(), gen.apply(&h2).unwrap());
            for i in 0..gen.sites() {
                assert!((lhs[i] - (a * l1[i] + b * l2[i])).abs() < 1e-12);
            }
            assert!(gen.dirichlet_form(&h1).unwrap() >= 0.0);
        }
    }

    #[test]
    fn apply_rejects_wrong_length() {
        let gen = homogeneous_ring(4);
        assert!(matches!(gen.apply(&[1.0; 5]), Err(GeneratorError::DimensionMismatch { .. })));
    }

    #[test]
    fn field_csv_has_metadata_header() {
        let lattice = TorusLattice::new(1, 4).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &lattice, "interval", 0.5, &[], &[0.0, 0.25, 0.5, 1.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# N: 4\n# d: 1\n# membrane: interval\n# time: 5.0000000000000000e-1\nsite,value\n"));
        assert_eq!(text.lines().count(), 9);
    }
}
