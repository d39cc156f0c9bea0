//! Discrete torus `T^d_N` and the per-bond exchange rates.
//!
//! Bonds are stored once, in the canonical orientation `(x, x + e_j)`, so the
//! rate read from either endpoint is the same number.

use std::collections::BTreeSet;
use std::io::Write;

use thiserror::Error;

use crate::geometry::{GeometryError, Membrane, SurfacePoint};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("lattice dimension {0} not in 1..=3")]
    BadDimension(usize),
    #[error("lattice side {0} is too small (need at least {1})")]
    SideTooSmall(usize, usize),
    #[error("membrane lives in dimension {membrane}, lattice in {lattice}")]
    DimensionMismatch { lattice: usize, membrane: usize },
    #[error("rate {rate} on bond {bond} is outside (0, 1]")]
    RateOutOfRange { bond: usize, rate: f64 },
    #[error("expected {expected} bond rates, got {got}")]
    WrongBondCount { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// `{0, …, N−1}^d` with periodic wrap. Site ids put coordinate 0 fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusLattice {
    dim: usize,
    side: usize,
}

impl TorusLattice {
    pub fn new(dim: usize, side: usize) -> Result<Self, LatticeError> {
        if !(1..=3).contains(&dim) {
            return Err(LatticeError::BadDimension(dim));
        }
        if side < 2 {
            return Err(LatticeError::SideTooSmall(side, 2));
        }
        Ok(TorusLattice { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `N`
    pub fn side(&self) -> usize {
        self.side
    }

    /// `N^d`
    pub fn sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Number of undirected nearest-neighbour bonds, `d N^d`.
    pub fn bonds(&self) -> usize {
        self.dim * self.sites()
    }

    pub fn site_id(&self, x: &[usize]) -> usize {
        debug_assert_eq!(x.len(), self.dim);
        x.iter().rev().fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    pub fn multi_index(&self, id: usize) -> Vec<usize> {
        let mut rest = id;
        (0..self.dim)
            .map(|_| {
                let c = rest % self.side;
                rest /= self.side;
                c
            })
            .collect()
    }

    fn stride(&self, axis: usize) -> usize {
        self.side.pow(axis as u32)
    }

    pub fn neighbor(&self, id: usize, axis: usize, dir: Direction) -> usize {
        let stride = self.stride(axis);
        let coord = (id / stride) % self.side;
        let base = id - coord * stride;
        let next = match dir {
            Direction::Forward => (coord + 1) % self.side,
            Direction::Backward => (coord + self.side - 1) % self.side,
        };
        base + next * stride
    }

    /// Macroscopic position `x/N ∈ [0, 1)^d`.
    pub fn position(&self, id: usize) -> Vec<f64> {
        self.multi_index(id).into_iter().map(|c| c as f64 / self.side as f64).collect()
    }

    /// Canonical bond id of `(x, x + e_axis)`.
    pub fn bond_id(&self, site: usize, axis: usize) -> usize {
        site * self.dim + axis
    }

    /// `(x, axis)` of a canonical bond.
    pub fn bond_origin(&self, bond: usize) -> (usize, usize) {
        (bond / self.dim, bond % self.dim)
    }

    /// Both endpoints `(x, x + e_axis)` of a bond.
    pub fn bond_endpoints(&self, bond: usize) -> (usize, usize) {
        let (x, axis) = self.bond_origin(bond);
        (x, self.neighbor(x, axis, Direction::Forward))
    }

    /// Bond joining `site` to its neighbour in direction `dir` along `axis`.
    pub fn incident_bond(&self, site: usize, axis: usize, dir: Direction) -> usize {
        match dir {
            Direction::Forward => self.bond_id(site, axis),
            Direction::Backward => self.bond_id(self.neighbor(site, axis, Direction::Backward), axis),
        }
    }
}

/// A bond whose endpoints lie on different sides of the membrane.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowBond {
    pub bond: usize,
    pub crossing: SurfacePoint,
}

#[derive(Debug, Clone)]
pub struct RateField {
    lattice: TorusLattice,
    rates: Vec<f64>,
    slow_bonds: Vec<SlowBond>,
    membrane_label: Option<String>,
}

impl RateField {
    /// Rate one on every bond.
    pub fn homogeneous(lattice: TorusLattice) -> Self {
        RateField { lattice, rates: vec![1.0; lattice.bonds()], slow_bonds: Vec::new(), membrane_label: None }
    }

    /// Explicit per-bond rates, indexed by canonical bond id.
    pub fn from_rates(lattice: TorusLattice, rates: Vec<f64>) -> Result<Self, LatticeError> {
        if rates.len() != lattice.bonds() {
            return Err(LatticeError::WrongBondCount { expected: lattice.bonds(), got: rates.len() });
        }
        if let Some((bond, &rate)) = rates.iter().enumerate().find(|(_, r)| !(**r > 0.0 && **r <= 1.0)) {
            return Err(LatticeError::RateOutOfRange { bond, rate });
        }
        Ok(RateField { lattice, rates, slow_bonds: Vec::new(), membrane_label: None })
    }

    /// Rates of the slow-bond process: `|ζ · e_j| / N` on bonds whose
    /// endpoints are classified on different sides, one elsewhere.
    pub fn build(lattice: TorusLattice, membrane: &Membrane) -> Result<Self, LatticeError> {
        if lattice.side() < 4 {
            return Err(LatticeError::SideTooSmall(lattice.side(), 4));
        }
        if membrane.dim() != lattice.dim() {
            return Err(LatticeError::DimensionMismatch { lattice: lattice.dim(), membrane: membrane.dim() });
        }
        let n = lattice.side() as f64;
        let mut rates = vec![1.0; lattice.bonds()];
        let mut slow_bonds = Vec::new();
        for site in 0..lattice.sites() {
            let a = lattice.position(site);
            for axis in 0..lattice.dim() {
                // unwrapped far endpoint; phi is periodic
                let mut b = a.clone();
                b[axis] += 1.0 / n;
                if let Some(crossing) = membrane.crossing_point(&a, &b)? {
                    let bond = lattice.bond_id(site, axis);
                    let rate = crossing.normal[axis].abs() / n;
                    if !(rate > 0.0) {
                        return Err(LatticeError::RateOutOfRange { bond, rate });
                    }
                    rates[bond] = rate;
                    slow_bonds.push(SlowBond { bond, crossing });
                }
            }
        }
        Ok(RateField { lattice, rates, slow_bonds, membrane_label: Some(membrane.label().to_string()) })
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, bond: usize) -> f64 {
        self.rates[bond]
    }

    /// `ξ_{x, x ± e_axis}` read from site `x`.
    pub fn rate_from(&self, site: usize, axis: usize, dir: Direction) -> f64 {
        self.rates[self.lattice.incident_bond(site, axis, dir)]
    }

    pub fn slow_bonds(&self) -> &[SlowBond] {
        &self.slow_bonds
    }

    pub fn membrane_label(&self) -> Option<&str> {
        self.membrane_label.as_deref()
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// `Γ_N`: sites touching at least one bond whose rate is not one.
    pub fn slow_set(&self) -> BTreeSet<usize> {
        let mut set = BTreeSet::new();
        for (bond, &rate) in self.rates.iter().enumerate() {
            if rate != 1.0 {
                let (x, y) = self.lattice.bond_endpoints(bond);
                set.insert(x);
                set.insert(y);
            }
        }
        set
    }

    /// CSV dump, one row per canonical bond: `x1..xd, j, rate, is_slow`.
    /// Axis `j` is 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), LatticeError> {
        let d = self.lattice.dim();
        let coords: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        writeln!(out, "{},j,rate,is_slow", coords.join(","))?;
        for (bond, &rate) in self.rates.iter().enumerate() {
            let (site, axis) = self.lattice.bond_origin(bond);
            let x: Vec<String> = self.lattice.multi_index(site).iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{},{:.16e},{}", x.join(","), axis + 1, rate, u8::from(rate != 1.0))?;
        }
        Ok(())
    }
}
