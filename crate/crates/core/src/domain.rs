//! Test functions `H = h + λ 1_Λ` with `∇h = −λ ζ` on the membrane, and the
//! lattice residual `N^{−d} Σ_x |N² 𝕃_N H(x/N) − Δh(x/N)|`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::generator::SparseGenerator;
use crate::geometry::{GeometryError, Membrane, Side};
use crate::lattice::{Direction, TorusLattice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("band half-width {eps} must lie in (0, {band}]")]
    BadBand { eps: f64, band: f64 },
    #[error("jump must be finite, got {0}")]
    BadJump(f64),
    #[error("mode has {got} wave numbers, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("test function lives in dimension {expected}, lattice in {got}")]
    LatticeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `cos · cos(2π k·u) + sin · sin(2π k·u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMode {
    pub wave: Vec<i64>,
    pub cos: f64,
    pub sin: f64,
}

impl FourierMode {
    pub fn new(wave: Vec<i64>, cos: f64, sin: f64) -> Self {
        FourierMode { wave, cos, sin }
    }

    /// Upper bound for `sup |∂_j|` of this mode.
    pub fn derivative_bound(&self, axis: usize) -> f64 {
        2.0 * PI * (self.wave[axis] as f64).abs() * self.cos.hypot(self.sin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Smooth,
    MembraneJump,
}

/// Value, gradient and Laplacian of the smooth part `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

#[derive(Debug, Clone)]
enum Body {
    Fourier(Vec<FourierMode>),
    Jump { membrane: Membrane, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    dim: usize,
    lambda: f64,
    body: Body,
}

impl TestFunction {
    /// Trigonometric polynomial, `λ = 0`.
    pub fn smooth(dim: usize, modes: Vec<FourierMode>) -> Result<Self, DomainError> {
        for m in &modes {
            if m.wave.len() != dim {
                return Err(DomainError::DimensionMismatch { expected: dim, got: m.wave.len() });
            }
        }
        Ok(TestFunction { dim, lambda: 0.0, body: Body::Fourier(modes) })
    }

    /// `h = −λ s ψ(s)` with `s` the signed distance and `ψ` a quintic
    /// smoothstep equal to 1 for `|s| ≤ eps/2` and 0 for `|s| ≥ eps`.
    /// Then `∇h = −λ ∇s = −λ ζ` on the membrane.
    pub fn membrane_jump(membrane: &Membrane, lambda: f64, eps: f64) -> Result<Self, DomainError> {
        if !lambda.is_finite() {
            return Err(DomainError::BadJump(lambda));
        }
        if !(eps > 0.0 && eps <= membrane.band_width()) {
            return Err(DomainError::BadBand { eps, band: membrane.band_width() });
        }
        Ok(TestFunction { dim: membrane.dim(), lambda, body: Body::Jump { membrane: membrane.clone(), eps } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> TestKind {
        match self.body {
            Body::Fourier(_) => TestKind::Smooth,
            Body::Jump { .. } => TestKind::MembraneJump,
        }
    }

    pub fn membrane(&self) -> Option<&Membrane> {
        match &self.body {
            Body::Jump { membrane, .. } => Some(membrane),
            Body::Fourier(_) => None,
        }
    }

    pub fn jet(&self, u: &[f64]) -> Result<Jet, DomainError> {
        if u.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: u.len() }.into());
        }
        match &self.body {
            Body::Fourier(modes) => Ok(fourier_jet(modes, u)),
            Body::Jump { membrane, eps } => jump_jet(membrane, self.lambda, *eps, u),
        }
    }

    pub fn h(&self, u: &[f64]) -> Result<f64, DomainError> {
        Ok(self.jet(u)?.value)
    }

    pub fn grad_h(&self, u: &[f64]) -> Result<Vec<f64>, DomainError> {
        Ok(self.jet(u)?.gradient)
    }

    pub fn laplacian_h(&self, u: &[f64]) -> Result<f64, DomainError> {
        Ok(self.jet(u)?.laplacian)
    }

    /// `H(u) = h(u) + λ 1_Λ(u)`.
    pub fn eval(&self, u: &[f64]) -> Result<f64, DomainError> {
        let h = self.h(u)?;
        Ok(match self.membrane() {
            Some(m) if m.classify(u) == Side::Inside => h + self.lambda,
            _ => h,
        })
    }

    /// `ℒ_Λ H (u) = Δh(u)`.
    pub fn eval_operator(&self, u: &[f64]) -> Result<f64, DomainError> {
        self.laplacian_h(u)
    }

    /// Upper bound for `sup_u |∂_j h(u)|` per axis.
    ///
    /// Exact bound for Fourier modes; for a membrane function the supremum
    /// of `|λ q'(s)|` times 1, which bounds each component of `λ q'(s) ∇s`.
    pub fn gradient_bounds(&self) -> Vec<f64> {
        match &self.body {
            Body::Fourier(modes) => {
                (0..self.dim).map(|j| modes.iter().map(|m| m.derivative_bound(j)).sum()).collect()
            }
            Body::Jump { eps, .. } => {
                let n = 4000;
                let sup = (0..=n)
                    .map(|i| {
                        let s = -eps + 2.0 * eps * i as f64 / n as f64;
                        bump_q(s, *eps).1.abs()
                    })
                    .fold(0.0, f64::max);
                // the grid can miss the peak by O(eps/n) times the slope
                let slack = 1.0 + 1e-2;
                vec![self.lambda.abs() * sup * slack; self.dim]
            }
        }
    }

    /// `H` at every lattice site `x/N`.
    pub fn sample(&self, lattice: &TorusLattice) -> Result<Vec<f64>, DomainError> {
        self.check_lattice(lattice)?;
        (0..lattice.sites()).map(|x| self.eval(&lattice.position(x))).collect()
    }

    /// `Δh` at every lattice site.
    pub fn sample_operator(&self, lattice: &TorusLattice) -> Result<Vec<f64>, DomainError> {
        self.check_lattice(lattice)?;
        (0..lattice.sites()).map(|x| self.eval_operator(&lattice.position(x))).collect()
    }

    fn check_lattice(&self, lattice: &TorusLattice) -> Result<(), DomainError> {
        if lattice.dim() != self.dim {
            return Err(DomainError::LatticeMismatch { expected: self.dim, got: lattice.dim() });
        }
        Ok(())
    }
}

fn fourier_jet(modes: &[FourierMode], u: &[f64]) -> Jet {
    let d = u.len();
    let mut value = 0.0;
    let mut gradient = vec![0.0; d];
    let mut laplacian = 0.0;
    for m in modes {
        let phase = 2.0 * PI * m.wave.iter().zip(u).map(|(k, x)| *k as f64 * x).sum::<f64>();
        let (s, c) = phase.sin_cos();
        let f = m.cos * c + m.sin * s;
        let df = -m.cos * s + m.sin * c;
        let k2: f64 = m.wave.iter().map(|k| (*k as f64).powi(2)).sum();
        value += f;
        for (g, k) in gradient.iter_mut().zip(&m.wave) {
            *g += 2.0 * PI * *k as f64 * df;
        }
        laplacian -= 4.0 * PI * PI * k2 * f;
    }
    Jet { value, gradient, laplacian }
}

/// `(q, q', q'')` for `q(s) = −s ψ(s)`.
fn bump_q(s: f64, eps: f64) -> (f64, f64, f64) {
    let a = s.abs();
    if a >= eps {
        return (0.0, 0.0, 0.0);
    }
    let (psi, dpsi, d2psi) = if a <= 0.5 * eps {
        (1.0, 0.0, 0.0)
    } else {
        let t = (eps - a) / (0.5 * eps);
        let val = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
        let d1 = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let d2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        let dt_ds = -2.0 / eps * s.signum();
        (val, d1 * dt_ds, d2 * 4.0 / (eps * eps))
    };
    (-s * psi, -psi - s * dpsi, -2.0 * dpsi - s * d2psi)
}

fn jump_jet(membrane: &Membrane, lambda: f64, eps: f64, u: &[f64]) -> Result<Jet, DomainError> {
    let d = u.len();
    let zero = Jet { value: 0.0, gradient: vec![0.0; d], laplacian: 0.0 };
    if lambda == 0.0 {
        return Ok(zero);
    }
    // cheap rejection before the projection
    let s0 = membrane.signed_distance(u)?;
    if s0.abs() >= eps {
        return Ok(zero);
    }
    let jet = membrane.distance_jet(u)?;
    let (q, dq, d2q) = bump_q(jet.value, eps);
    let grad_sq: f64 = jet.gradient.iter().map(|g| g * g).sum();
    Ok(Jet {
        value: lambda * q,
        gradient: jet.gradient.iter().map(|g| lambda * dq * g).collect(),
        laplacian: lambda * (d2q * grad_sq + dq * jet.laplacian),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBreakdown {
    /// `N^{−d} Σ_x |N² 𝕃_N H(x/N) − Δh(x/N)|`
    pub total: f64,
    /// `max_{x ∉ Γ_N} |N² 𝕃_N H(x/N) − Δh(x/N)|`
    pub off_gamma_max: f64,
    /// `max_{x ∈ Γ_N, j} |N Σ_± ξ_{x,x±e_j} (H(x±e_j) − H(x))|`
    pub on_gamma_max: f64,
    pub gamma_sites: usize,
}

pub fn generator_residual(tf: &TestFunction, gen: &SparseGenerator) -> Result<f64, DomainError> {
    Ok(residual_breakdown(tf, gen)?.total)
}

/// `Γ_N` is read off the generator: sites with an incident rate other than 1.
pub fn residual_breakdown(tf: &TestFunction, gen: &SparseGenerator) -> Result<ResidualBreakdown, DomainError> {
    let lattice = *gen.lattice();
    let h = tf.sample(&lattice)?;
    let lap = tf.sample_operator(&lattice)?;
    let n = lattice.side() as f64;
    let scale = n * n;
    let mut lh = vec![0.0; lattice.sites()];
    gen.apply_into(&h, &mut lh);

    let mut total = 0.0;
    let mut off_gamma_max: f64 = 0.0;
    let mut on_gamma_max: f64 = 0.0;
    let mut gamma_sites = 0;
    for x in 0..lattice.sites() {
        let diff = (scale * lh[x] - lap[x]).abs();
        total += diff;
        let on_gamma = gen.row(x).any(|(y, v)| y != x && v != 1.0);
        if !on_gamma {
            off_gamma_max = off_gamma_max.max(diff);
            continue;
        }
        gamma_sites += 1;
        for axis in 0..lattice.dim() {
            let mut flux = 0.0;
            for dir in [Direction::Forward, Direction::Backward] {
                let y = lattice.neighbor(x, axis, dir);
                flux += gen.entry(x, y) * (h[y] - h[x]);
            }
            on_gamma_max = on_gamma_max.max((n * flux).abs());
        }
    }
    Ok(ResidualBreakdown { total: total / lattice.sites() as f64, off_gamma_max, on_gamma_max, gamma_sites })
}
