//! Experiment orchestration: TOML configs in, CSV tables out.
//!
//! Each command is a pure function of the configuration and seed. Tables
//! carry their provenance as `#` lines; the wall-clock timestamp goes into a
//! JSON sidecar so that re-runs produce byte-identical CSV.

mod commands;
mod config;
mod table;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{
    cmd_generator_convergence, cmd_hydro, cmd_qv, cmd_rates, cmd_spectrum, cmd_uniqueness_demo, run_experiment,
};
pub use config::{
    ExperimentConfig, ExperimentKind, MembraneSpec, ModeSpec, QvSpec, ReplicaSpec, SpectrumSpec, TestFunctionSpec,
    UniquenessSpec,
};
pub use table::{Key, ResultTable, Row};

/// The bundled reference for every configuration key.
pub const CONFIG_REFERENCE: &str = include_str!("../../CONFIG.md");

/// Identifies the code that produced a table.
pub const BUILD_ID: &str = concat!("slowbond-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("column {column} of table {table} holds a non-finite value")]
    NonFinite { table: String, column: String },
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Lattice(#[from] crate::lattice::LatticeError),
    #[error(transparent)]
    Generator(#[from] crate::generator::GeneratorError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything one command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub kind: ExperimentKind,
    pub tables: Vec<ResultTable>,
    /// auxiliary CSV files: `(file name, contents)`
    pub files: Vec<(String, String)>,
    /// invariant violations; empty on success
    pub failures: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            written.push(t.write_to_dir(dir)?);
        }
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}
