use thiserror::Error;

/// Errors shared across the solver crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("argument out of range: {0}")]
    Range(String),

    #[error("state is not admissible: {0}")]
    Inadmissible(String),

    #[error("infeasible pairing: spectral radius of αα* is {radius:.6e} > 1/4; {hint}")]
    InfeasiblePairing { radius: f64, hint: String },

    #[error("chemical-potential bracket exhausted after {widenings} widenings: tr γ ∈ [{tr_lo:.6e}, {tr_hi:.6e}] cannot reach λ = {lambda:.6e}")]
    MultiplierBracket {
        widenings: usize,
        tr_lo: f64,
        tr_hi: f64,
        lambda: f64,
    },

    #[error("solver did not converge after {iterations} iterations (|ΔE| = {delta_e:.3e}, residual = {residual:.3e})")]
    NonConverged {
        iterations: usize,
        delta_e: f64,
        residual: f64,
    },

    #[error("scan bracket endpoints classify identically ({class}); widen the λ bracket")]
    ScanBracket { class: String },

    #[error("numerical domain error: {0}")]
    Domain(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("container format error: {0}")]
    Container(String),
}
