//! Implicit description of the region `Λ ⊂ T^d` and its boundary.
//!
//! A [`Membrane`] is the zero level set of a periodic scalar field `phi`, with
//! `Λ = {phi ≤ 0}`. Normals point from `Λ` toward its complement. Distances
//! are computed by projecting onto the level set, so they are only trusted
//! inside the tubular neighbourhood of width [`Membrane::band_width`].

use std::fmt;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use thiserror::Error;

/// Points with `|phi| <= SURFACE_TOL` count as lying on the membrane.
pub const SURFACE_TOL: f64 = 1e-9;
/// Bisection stops once `|phi|` drops below this.
pub const BISECTION_TOL: f64 = 1e-12;
pub const BISECTION_MAX_ITER: usize = 100;
/// Closest-point projection tolerance on the optimality residual.
pub const PROJECTION_TOL: f64 = 1e-10;
pub const PROJECTION_MAX_ITER: usize = 50;

/// Smallest admissible `|∇phi|` inside the band.
const GRAD_FLOOR: f64 = 1e-6;
const FD_STEP_HESSIAN: f64 = 1e-6;
const FD_STEP_DISTANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is not on the membrane (|phi| = {0:e})")]
    NotOnSurface(f64),
    #[error("{0} did not converge")]
    ConvergenceFailure(&'static str),
    #[error("invalid membrane: {0}")]
    InvalidMembrane(String),
    #[error("point has dimension {got}, membrane lives in dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Inside,
    Outside,
}

/// A point of `∂Λ` together with the exterior unit normal there.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub u: Vec<f64>,
    pub normal: Vec<f64>,
}

/// Value, gradient and Laplacian of the signed distance at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// Axis-aligned ellipsoid, `phi = m (sqrt(Σ (δ_i/a_i)²) − 1)` with
    /// `m = min a_i`; reduces to `|δ| − r` for a ball and an interval.
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
    Implicit { phi: ScalarFn, grad: VectorFn },
}

#[derive(Clone)]
pub struct Membrane {
    dim: usize,
    shape: Shape,
    band_width: f64,
    label: String,
}

impl fmt::Debug for Membrane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Membrane");
        s.field("label", &self.label).field("dim", &self.dim);
        if let Shape::Ellipsoid { center, semi_axes } = &self.shape {
            s.field("center", center).field("semi_axes", semi_axes);
        }
        s.field("band_width", &self.band_width).finish()
    }
}

/// Minimum-image displacement on the unit torus, each component in `[-½, ½)`.
pub fn torus_delta(u: &[f64], c: &[f64]) -> Vec<f64> {
    u.iter().zip(c).map(|(a, b)| wrap_centered(a - b)).collect()
}

fn wrap_centered(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Membrane {
    /// Ball of the given radius, `Λ` being the closed ball.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, GeometryError> {
        let semi = vec![radius; center.len()];
        let label = if center.len() == 2 { "circle" } else { "ball" };
        Self::ellipsoid_labelled(center, semi, label.to_string())
    }

    /// Axis-aligned ellipsoid (ellipse in d = 2).
    pub fn ellipsoid(center: Vec<f64>, semi_axes: Vec<f64>) -> Result<Self, GeometryError> {
        let label = if center.len() == 2 { "ellipse" } else { "ellipsoid" };
        Self::ellipsoid_labelled(center, semi_axes, label.to_string())
    }

    /// The arc `[left, right]` of the circle `T`, for d = 1.
    pub fn interval(left: f64, right: f64) -> Result<Self, GeometryError> {
        if !(right > left) {
            return Err(GeometryError::InvalidMembrane(format!(
                "interval needs left < right, got [{left}, {right}]"
            )));
        }
        let center = 0.5 * (left + right);
        Self::ellipsoid_labelled(vec![center], vec![0.5 * (right - left)], "interval".into())
    }

    fn ellipsoid_labelled(
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        label: String,
    ) -> Result<Self, GeometryError> {
        let dim = center.len();
        if !(1..=3).contains(&dim) {
            return Err(GeometryError::InvalidMembrane(format!("dimension {dim} not in 1..=3")));
        }
        if semi_axes.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: semi_axes.len() });
        }
        if semi_axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(GeometryError::InvalidMembrane("semi-axes must be positive".into()));
        }
        let min = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = semi_axes.iter().cloned().fold(0.0, f64::max);
        if max >= 0.5 {
            return Err(GeometryError::InvalidMembrane(format!(
                "largest semi-axis {max} must be below 1/2 to fit in the torus"
            )));
        }
        // inner focal distance is the smallest radius of curvature, min²/max
        let band_width = 0.8 * f64::min(min * min / max, 0.5 - max);
        let center = center.iter().map(|c| c.rem_euclid(1.0)).collect();
        let membrane = Membrane {
            dim,
            shape: Shape::Ellipsoid { center, semi_axes },
            band_width,
            label,
        };
        membrane.check_band()?;
        Ok(membrane)
    }

    /// A user-supplied membrane. `phi` must be 1-periodic in every coordinate
    /// and `grad` its analytic gradient.
    pub fn implicit<F, G>(
        dim: usize,
        label: impl Into<String>,
        band_width: f64,
        phi: F,
        grad: G,
    ) -> Result<Self, GeometryError>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if !(1..=3).contains(&dim) {
            return Err(GeometryError::InvalidMembrane(format!("dimension {dim} not in 1..=3")));
        }
        if !(band_width > 0.0) {
            return Err(GeometryError::InvalidMembrane("band width must be positive".into()));
        }
        let membrane = Membrane {
            dim,
            shape: Shape::Implicit { phi: Arc::new(phi), grad: Arc::new(grad) },
            band_width,
            label: label.into(),
        };
        membrane.check_band()?;
        Ok(membrane)
    }

    /// Override the tubular-neighbourhood width; re-validates `|∇phi|`.
    pub fn with_band_width(mut self, band_width: f64) -> Result<Self, GeometryError> {
        if !(band_width > 0.0) {
            return Err(GeometryError::InvalidMembrane("band width must be positive".into()));
        }
        self.band_width = band_width;
        self.check_band()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn band_width(&self) -> f64 {
        self.band_width
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Sample a regular grid and require `|∇phi| >= GRAD_FLOOR` wherever
    /// `|phi| <= band_width`.
    fn check_band(&self) -> Result<(), GeometryError> {
        let per_axis: usize = match self.dim {
            1 => 4096,
            2 => 128,
            _ => 32,
        };
        let total = per_axis.pow(self.dim as u32);
        let mut u = vec![0.0; self.dim];
        let mut found_surface = false;
        for id in 0..total {
            let mut rest = id;
            for coord in u.iter_mut() {
                *coord = ((rest % per_axis) as f64 + 0.5) / per_axis as f64;
                rest /= per_axis;
            }
            let value = self.phi(&u);
            if value.abs() <= self.band_width {
                found_surface = true;
                let g = norm(&self.grad_phi(&u));
                if !(g >= GRAD_FLOOR) {
                    return Err(GeometryError::InvalidMembrane(format!(
                        "|grad phi| = {g:e} at {u:?} inside the band"
                    )));
                }
            }
        }
        if !found_surface {
            return Err(GeometryError::InvalidMembrane(
                "no sample point lies within the band; the membrane is empty or too thin".into(),
            ));
        }
        Ok(())
    }

    fn check_dim(&self, u: &[f64]) -> Result<(), GeometryError> {
        if u.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: u.len() });
        }
        Ok(())
    }

    pub fn phi(&self, u: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ellipsoid { center, semi_axes } => {
                let m = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                let delta = torus_delta(u, center);
                let q: f64 = delta.iter().zip(semi_axes).map(|(d, a)| (d / a).powi(2)).sum();
                m * (q.sqrt() - 1.0)
            }
            Shape::Implicit { phi, .. } => phi(u),
        }
    }

    pub fn grad_phi(&self, u: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Ellipsoid { center, semi_axes } => {
                let m = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                let delta = torus_delta(u, center);
                let rho = delta
                    .iter()
                    .zip(semi_axes)
                    .map(|(d, a)| (d / a).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if rho == 0.0 {
                    return vec![0.0; self.dim];
                }
                delta.iter().zip(semi_axes).map(|(d, a)| m * d / (a * a * rho)).collect()
            }
            Shape::Implicit { grad, .. } => grad(u),
        }
    }

    /// Hessian of `phi`, row-major `dim × dim`. Analytic for the catalogue,
    /// central differences of the gradient otherwise.
    pub fn hessian_phi(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match &self.shape {
            Shape::Ellipsoid { center, semi_axes } => {
                let m = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                let delta = torus_delta(u, center);
                let w: Vec<f64> = delta.iter().zip(semi_axes).map(|(x, a)| x / (a * a)).collect();
                let rho = delta
                    .iter()
                    .zip(semi_axes)
                    .map(|(x, a)| (x / a).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let mut hess = vec![0.0; d * d];
                if rho == 0.0 {
                    return hess;
                }
                for i in 0..d {
                    for j in 0..d {
                        let diag = if i == j { 1.0 / (semi_axes[i].powi(2) * rho) } else { 0.0 };
                        hess[i * d + j] = m * (diag - w[i] * w[j] / rho.powi(3));
                    }
                }
                hess
            }
            Shape::Implicit { grad, .. } => {
                let mut hess = vec![0.0; d * d];
                let mut p = u.to_vec();
                for j in 0..d {
                    p[j] = u[j] + FD_STEP_HESSIAN;
                    let gp = grad(&p);
                    p[j] = u[j] - FD_STEP_HESSIAN;
                    let gm = grad(&p);
                    p[j] = u[j];
                    for i in 0..d {
                        hess[i * d + j] = (gp[i] - gm[i]) / (2.0 * FD_STEP_HESSIAN);
                    }
                }
                // symmetrise the difference quotient
                for i in 0..d {
                    for j in 0..i {
                        let avg = 0.5 * (hess[i * d + j] + hess[j * d + i]);
                        hess[i * d + j] = avg;
                        hess[j * d + i] = avg;
                    }
                }
                hess
            }
        }
    }

    /// `phi(u) = 0` is counted as inside.
    pub fn classify(&self, u: &[f64]) -> Side {
        if self.phi(u) <= 0.0 {
            Side::Inside
        } else {
            Side::Outside
        }
    }

    pub fn normal_at(&self, u: &[f64]) -> Result<Vec<f64>, GeometryError> {
        self.check_dim(u)?;
        let value = self.phi(u);
        if value.abs() > SURFACE_TOL {
            return Err(GeometryError::NotOnSurface(value.abs()));
        }
        self.unit_gradient(u)
    }

    fn unit_gradient(&self, u: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let g = self.grad_phi(u);
        let n = norm(&g);
        if !(n >= GRAD_FLOOR) {
            return Err(GeometryError::InvalidMembrane(format!("vanishing gradient at {u:?}")));
        }
        Ok(g.iter().map(|x| x / n).collect())
    }

    /// Root of `phi` on the segment `[a, b]` closest to `a`, when `a` and `b`
    /// lie on different sides.
    pub fn crossing_point(&self, a: &[f64], b: &[f64]) -> Result<Option<SurfacePoint>, GeometryError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let side_a = self.classify(a);
        if side_a == self.classify(b) {
            return Ok(None);
        }
        let at = |t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };

        // Locate the first sign change so that the root nearest `a` is kept
        // when the segment cuts the membrane more than once.
        const SCAN: usize = 16;
        let (mut lo, mut hi) = (0.0, 1.0);
        for k in 1..=SCAN {
            let t = k as f64 / SCAN as f64;
            if self.classify(&at(t)) != side_a {
                lo = (k - 1) as f64 / SCAN as f64;
                hi = t;
                break;
            }
        }

        let mut found = None;
        for _ in 0..BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let p = at(mid);
            let value = self.phi(&p);
            if value.abs() <= BISECTION_TOL {
                found = Some(p);
                break;
            }
            if self.classify(&p) == side_a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Ends of the bracket may themselves be roots (tie rule puts phi = 0 inside).
        if found.is_none() {
            for t in [lo, hi] {
                let p = at(t);
                if self.phi(&p).abs() <= BISECTION_TOL {
                    found = Some(p);
                    break;
                }
            }
        }
        let p = found.ok_or(GeometryError::ConvergenceFailure("bisection"))?;
        let normal = self.unit_gradient(&p)?;
        let u = p.iter().map(|x| x.rem_euclid(1.0)).collect();
        Ok(Some(SurfacePoint { u, normal }))
    }

    /// Signed distance to `∂Λ`: negative inside, positive outside.
    ///
    /// Inside the band the value is exact up to the projection tolerance.
    /// Outside the band the magnitude is only guaranteed to be at least
    /// `band_width`.
    pub fn signed_distance(&self, u: &[f64]) -> Result<f64, GeometryError> {
        self.check_dim(u)?;
        Ok(self.project(u)?.map_or_else(
            |far| far,
            |(foot, _)| {
                let sign = if self.phi(u) <= 0.0 { -1.0 } else { 1.0 };
                let dist = norm(&u.iter().zip(&foot).map(|(a, b)| a - b).collect::<Vec<_>>());
                sign * dist
            },
        ))
    }

    /// Closest point of `∂Λ` to `u` with the exterior normal there, or
    /// `Err(value)` carrying a far-field signed distance when `u` is beyond
    /// the band. The foot point is returned in unwrapped coordinates near `u`.
    fn project(&self, u: &[f64]) -> Result<Result<(Vec<f64>, f64), f64>, GeometryError> {
        let d = self.dim;
        let phi_u = self.phi(u);
        if phi_u == 0.0 {
            return Ok(Ok((u.to_vec(), 0.0)));
        }
        let sign = if phi_u < 0.0 { -1.0 } else { 1.0 };
        let far = sign * self.band_width.max(f64::MIN_POSITIVE);

        // Stage 1: damped Newton along the gradient onto the level set.
        let mut p = u.to_vec();
        let mut value = phi_u;
        let mut landed = false;
        for _ in 0..PROJECTION_MAX_ITER {
            if value.abs() <= 1e-14 {
                landed = true;
                break;
            }
            let g = self.grad_phi(&p);
            let gg = dot(&g, &g);
            if !(gg > GRAD_FLOOR * GRAD_FLOOR) {
                return Ok(Err(far));
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x - alpha * value * gi / gg).collect();
                let tv = self.phi(&trial);
                if tv.abs() < value.abs() {
                    p = trial;
                    value = tv;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                landed = value.abs() <= PROJECTION_TOL;
                break;
            }
        }
        if !landed && value.abs() > PROJECTION_TOL {
            return Ok(Err(far));
        }
        let gradient_guess = norm(&u.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>());

        // Stage 2: Newton on the closest-point conditions
        //   p − u + t ∇phi(p) = 0,  phi(p) = 0.
        let g0 = self.grad_phi(&p);
        let mut t = dot(&u.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>(), &g0) / dot(&g0, &g0);
        let residual = |p: &[f64], t: f64| -> Vec<f64> {
            let g = self.grad_phi(p);
            let mut r: Vec<f64> = (0..d).map(|i| p[i] - u[i] + t * g[i]).collect();
            r.push(self.phi(p));
            r
        };
        let mut r = residual(&p, t);
        let mut rn = norm(&r);
        for _ in 0..PROJECTION_MAX_ITER {
            if rn <= 1e-14 {
                break;
            }
            let g = self.grad_phi(&p);
            let hess = self.hessian_phi(&p);
            let jac = Mat::<f64>::from_fn(d + 1, d + 1, |i, j| match (i < d, j < d) {
                (true, true) => (if i == j { 1.0 } else { 0.0 }) + t * hess[i * d + j],
                (true, false) => g[i],
                (false, true) => g[j],
                (false, false) => 0.0,
            });
            let rhs = Mat::<f64>::from_fn(d + 1, 1, |i, _| -r[i]);
            let step = jac.partial_piv_lu().solve(&rhs);
            if (0..=d).any(|i| !step[(i, 0)].is_finite()) {
                break;
            }
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial_p: Vec<f64> = (0..d).map(|i| p[i] + alpha * step[(i, 0)]).collect();
                let trial_t = t + alpha * step[(d, 0)];
                let trial_r = residual(&trial_p, trial_t);
                let trial_n = norm(&trial_r);
                if trial_n < rn {
                    p = trial_p;
                    t = trial_t;
                    r = trial_r;
                    rn = trial_n;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if !(rn <= PROJECTION_TOL) {
            if gradient_guess > self.band_width {
                return Ok(Err(sign * gradient_guess));
            }
            return Err(GeometryError::ConvergenceFailure("closest-point projection"));
        }
        Ok(Ok((p, t)))
    }

    /// Signed distance with its gradient and Laplacian.
    ///
    /// For the built-in shapes the derivatives come from the foot point: the
    /// gradient is the normal there and the Laplacian is `Σ κ_i / (1 + s κ_i)`
    /// over the principal curvatures. Implicit membranes use fourth-order
    /// central differences of [`Membrane::signed_distance`].
    pub fn distance_jet(&self, u: &[f64]) -> Result<DistanceJet, GeometryError> {
        self.check_dim(u)?;
        match self.shape {
            Shape::Ellipsoid { .. } => self.distance_jet_analytic(u),
            Shape::Implicit { .. } => self.distance_jet_fd(u),
        }
    }

    fn distance_jet_analytic(&self, u: &[f64]) -> Result<DistanceJet, GeometryError> {
        let (foot, _) = match self.project(u)? {
            Ok(found) => found,
            Err(far) => {
                return Ok(DistanceJet { value: far, gradient: vec![0.0; self.dim], laplacian: 0.0 })
            }
        };
        let sign = if self.phi(u) <= 0.0 { -1.0 } else { 1.0 };
        let s = sign * norm(&u.iter().zip(&foot).map(|(a, b)| a - b).collect::<Vec<_>>());
        let g = self.grad_phi(&foot);
        let gnorm = norm(&g);
        let n: Vec<f64> = g.iter().map(|x| x / gnorm).collect();
        let hess = self.hessian_phi(&foot);
        let d = self.dim;
        let shape_form = |a: &[f64], b: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += a[i] * hess[i * d + j] * b[j];
                }
            }
            acc / gnorm
        };
        let laplacian = match d {
            1 => 0.0,
            2 => {
                let tangent = [-n[1], n[0]];
                let k = shape_form(&tangent, &tangent);
                k / (1.0 + s * k)
            }
            _ => {
                let (t1, t2) = tangent_basis(&n);
                let (a, b, c) = (shape_form(&t1, &t1), shape_form(&t1, &t2), shape_form(&t2, &t2));
                let trace = a + c;
                let det = a * c - b * b;
                (trace + 2.0 * s * det) / (1.0 + s * trace + s * s * det)
            }
        };
        Ok(DistanceJet { value: s, gradient: n, laplacian })
    }

    fn distance_jet_fd(&self, u: &[f64]) -> Result<DistanceJet, GeometryError> {
        let h = FD_STEP_DISTANCE;
        let value = self.signed_distance(u)?;
        let mut gradient = vec![0.0; self.dim];
        let mut laplacian = 0.0;
        let mut p = u.to_vec();
        for j in 0..self.dim {
            let mut f = [0.0; 4];
            for (slot, k) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
                p[j] = u[j] + k * h;
                f[slot] = self.signed_distance(&p)?;
            }
            p[j] = u[j];
            gradient[j] = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h);
            laplacian += (-f[0] + 16.0 * f[1] - 30.0 * value + 16.0 * f[2] - f[3]) / (12.0 * h * h);
        }
        Ok(DistanceJet { value, gradient, laplacian })
    }
}

fn tangent_basis(n: &[f64]) -> ([f64; 3], [f64; 3]) {
    let axis = (0..3)
        .min_by(|&a, &b| n[a].abs().partial_cmp(&n[b].abs()).unwrap())
        .unwrap();
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let proj = dot(&e, n);
    let mut t1 = [e[0] - proj * n[0], e[1] - proj * n[1], e[2] - proj * n[2]];
    let len = norm(&t1);
    t1.iter_mut().for_each(|x| *x /= len);
    let t2 = [
        n[1] * t1[2] - n[2] * t1[1],
        n[2] * t1[0] - n[0] * t1[2],
        n[0] * t1[1] - n[1] * t1[0],
    ];
    (t1, t2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> Membrane {
        Membrane::ball(vec![0.5, 0.5], 0.25).unwrap()
    }

    fn ellipse() -> Membrane {
        Membrane::ellipsoid(vec![0.5, 0.5], vec![0.3, 0.2]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn classify_circle() {
        let m = circle();
        assert_eq!(m.classify(&[0.5, 0.5]), Side::Inside);
        assert_eq!(m.classify(&[0.0, 0.0]), Side::Outside);
        assert_eq!(m.classify(&[0.75, 0.5]), Side::Inside);
    }

    #[test]
    fn classify_is_periodic() {
        let m = circle();
        for u in [[0.1, 0.3], [0.6, 0.55], [0.9, 0.02]] {
            let shifted = [u[0] + 1.0, u[1] - 2.0];
            assert!((m.phi(&u) - m.phi(&shifted)).abs() < 1e-14);
            assert_eq!(m.classify(&u), m.classify(&shifted));
        }
    }

    #[test]
    fn normals_of_circle_and_ellipse() {
        let m = circle();
        assert!(close(&m.normal_at(&[0.75, 0.5]).unwrap(), &[1.0, 0.0], 1e-12));
        assert!(close(&m.normal_at(&[0.5, 0.75]).unwrap(), &[0.0, 1.0], 1e-12));
        let e = ellipse();
        assert!(close(&e.normal_at(&[0.8, 0.5]).unwrap(), &[1.0, 0.0], 1e-12));
    }

    #[test]
    fn normal_off_surface_is_rejected() {
        let m = circle();
        assert!(matches!(m.normal_at(&[0.6, 0.5]), Err(GeometryError::NotOnSurface(_))));
    }

    #[test]
    fn crossing_examples() {
        let m = circle();
        let sp = m.crossing_point(&[0.74, 0.5], &[0.76, 0.5]).unwrap().unwrap();
        assert!(close(&sp.u, &[0.75, 0.5], 1e-11));
        assert!(close(&sp.normal, &[1.0, 0.0], 1e-10));
        assert!(m.crossing_point(&[0.5, 0.5], &[0.55, 0.5]).unwrap().is_none());

        let arc = Membrane::interval(0.25, 0.75).unwrap();
        let sp = arc.crossing_point(&[0.7], &[0.8]).unwrap().unwrap();
        assert!((sp.u[0] - 0.75).abs() < 1e-11);
        assert_eq!(sp.normal, vec![1.0]);
    }

    #[test]
    fn crossing_keeps_root_nearest_first_endpoint() {
        // phi = sin(6πu) changes sign at 1/6, 1/3 and 1/2 along [0.1, 0.55]
        let bands = Membrane::implicit(
            1,
            "bands",
            0.5,
            |u| (6.0 * std::f64::consts::PI * u[0]).sin(),
            |u| vec![6.0 * std::f64::consts::PI * (6.0 * std::f64::consts::PI * u[0]).cos()],
        )
        .unwrap();
        let sp = bands.crossing_point(&[0.1], &[0.55]).unwrap().unwrap();
        assert!((sp.u[0] - 1.0 / 6.0).abs() < 1e-11);
        assert_eq!(sp.normal, vec![-1.0]);
    }

    #[test]
    fn signed_distance_examples() {
        let m = circle();
        assert!((m.signed_distance(&[0.8, 0.5]).unwrap() - 0.05).abs() < 1e-12);
        assert!((m.signed_distance(&[0.7, 0.5]).unwrap() + 0.05).abs() < 1e-12);
    }

    #[test]
    fn signed_distance_far_from_band_has_band_magnitude() {
        let m = circle();
        let centre = m.signed_distance(&[0.5, 0.5]).unwrap();
        assert!(centre < 0.0 && centre.abs() >= m.band_width());
        let corner = m.signed_distance(&[0.0, 0.0]).unwrap();
        assert!(corner > 0.0 && corner >= m.band_width());
    }

    #[test]
    fn ellipse_distance_matches_dense_surface_sampling() {
        let e = ellipse();
        let samples = 1_000_000;
        let surface: Vec<[f64; 2]> = (0..samples)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
                [0.5 + 0.3 * th.cos(), 0.5 + 0.2 * th.sin()]
            })
            .collect();
        let probes = [[0.82, 0.55], [0.5, 0.27], [0.62, 0.6], [0.35, 0.4], [0.45, 0.78], [0.7, 0.33]];
        for u in probes {
            let brute = surface
                .iter()
                .map(|p| ((u[0] - p[0]).powi(2) + (u[1] - p[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            let got = e.signed_distance(&u).unwrap();
            assert!((got.abs() - brute).abs() < 1e-6, "{u:?}: {got} vs {brute}");
            assert_eq!(got < 0.0, e.classify(&u) == Side::Inside);
        }
    }

    #[test]
    fn ellipsoid_distance_jet_matches_finite_differences() {
        let e = Membrane::ellipsoid(vec![0.5, 0.5, 0.5], vec![0.3, 0.25, 0.2]).unwrap();
        let u = [0.58, 0.41, 0.66];
        let jet = e.distance_jet(&u).unwrap();
        let h = 1e-4;
        let mut lap = 0.0;
        let mut p = u;
        for j in 0..3 {
            p[j] = u[j] + h;
            let fp = e.signed_distance(&p).unwrap();
            p[j] = u[j] - h;
            let fm = e.signed_distance(&p).unwrap();
            p[j] = u[j];
            assert!(((fp - fm) / (2.0 * h) - jet.gradient[j]).abs() < 1e-7);
            lap += (fp - 2.0 * jet.value + fm) / (h * h);
        }
        assert!((lap - jet.laplacian).abs() < 1e-4, "{lap} vs {}", jet.laplacian);
    }

    #[test]
    fn implicit_membrane_distance_jet() {
        // circle supplied as a user membrane; Laplacian of |u − c| − r is 1/|u − c|
        let m = Membrane::implicit(
            2,
            "user-circle",
            0.2,
            |u| {
                let d = torus_delta(u, &[0.5, 0.5]);
                (d[0] * d[0] + d[1] * d[1]).sqrt() - 0.25
            },
            |u| {
                let d = torus_delta(u, &[0.5, 0.5]);
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                vec![d[0] / r, d[1] / r]
            },
        )
        .unwrap();
        let jet = m.distance_jet(&[0.8, 0.5]).unwrap();
        assert!((jet.value - 0.05).abs() < 1e-10);
        assert!((jet.gradient[0] - 1.0).abs() < 1e-8);
        assert!((jet.laplacian - 1.0 / 0.3).abs() < 1e-5);
    }

    #[test]
    fn rejects_oversized_or_degenerate_shapes() {
        assert!(Membrane::ball(vec![0.5, 0.5], 0.6).is_err());
        assert!(Membrane::ball(vec![0.5, 0.5], -0.1).is_err());
        assert!(Membrane::interval(0.6, 0.2).is_err());
        assert!(Membrane::ball(vec![0.5; 4], 0.1).is_err());
    }
}
