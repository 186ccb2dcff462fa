use thiserror::Error;

/// Errors surfaced by table construction, fitting and the event engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Requested atom number exceeds the number of trap states.
    #[error("atom number {n_atoms} exceeds trap capacity {capacity}")]
    Capacity { n_atoms: usize, capacity: usize },

    /// A scalar root find could not bracket its root.
    #[error("root bracketing failed: {0}")]
    Bracket(String),

    /// A shell quadruple violates energy conservation.
    #[error("collision channel ({e1},{e2})->({e3},{e4}) violates energy conservation")]
    Conservation { e1: u16, e2: u16, e3: u16, e4: u16 },

    /// The Fermi-Dirac fit failed to converge or had too little data.
    #[error("fermi fit: {0}")]
    Fit(String),

    /// Invalid configuration or parameter combination.
    #[error("config: {0}")]
    Config(String),

    /// The event engine reached an inconsistent internal state.
    #[error("engine fault: {0}")]
    Engine(String),

    /// Table cache I/O or format mismatch.
    #[error("table cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
