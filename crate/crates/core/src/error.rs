use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unknown unit tag `{0}`")]
    UnknownUnit(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("singular dipole-dipole evaluation at zero separation")]
    SingularPair,

    #[error("molecules {i} and {j} collapsed to separation {distance:.3e} a")]
    Collapse { i: usize, j: usize, distance: f64 },

    #[error("minimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    #[error("unstable equilibrium: Hessian eigenvalue {eigenvalue:.3e} on {axis} coordinates")]
    Unstable { eigenvalue: f64, axis: String },

    #[error("imaginary phonon frequency: eigenvalue {0:.3e}")]
    ImaginaryFrequency(f64),

    #[error("zero-frequency mode {mode} carries relative motion; couplings undefined")]
    ZeroFrequencyMode { mode: usize },

    #[error("drive resonant with mode {mode} (detuning {detuning:.3e})")]
    Resonance { mode: usize, detuning: f64 },

    #[error("no detuning satisfies displacement bound {target} (sign {sign:+})")]
    Infeasible { target: f64, sign: i8 },

    #[error("basis cutoff too small: level ({n}, {m}) has population {population:.3e} in the top shells")]
    BasisCutoff { n: u32, m: u32, population: f64 },

    #[error("adiabatic condition violated: margin {margin:.3e} below safety factor {safety}")]
    Adiabaticity { margin: f64, safety: f64 },

    #[error("Fock cutoff not converged: doubling shifted the result by {shift:.3e}")]
    FockCutoff { shift: f64 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::UnknownUnit(_) => "unknown_unit",
            Error::Config { .. } => "config",
            Error::SingularPair => "singular_pair",
            Error::Collapse { .. } => "collapse",
            Error::NotConverged { .. } => "not_converged",
            Error::Unstable { .. } => "unstable",
            Error::ImaginaryFrequency(_) => "imaginary_frequency",
            Error::ZeroFrequencyMode { .. } => "zero_frequency_mode",
            Error::Resonance { .. } => "resonance",
            Error::Infeasible { .. } => "infeasible",
            Error::BasisCutoff { .. } => "basis_cutoff",
            Error::Adiabaticity { .. } => "adiabaticity",
            Error::FockCutoff { .. } => "fock_cutoff",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
