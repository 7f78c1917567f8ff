//! Lattice workbench for the Hartree-Fock-Bogoliubov variational problem of
//! self-gravitating pseudo-relativistic fermions.
//!
//! The model lives on a periodic cubic box: the kinetic operator
//! `T = √(-Δ+m²) - m` acts as a Fourier multiplier, the attractive `-1/|x-y|`
//! interaction is represented by a regularized Coulomb difference kernel with
//! a neutralizing background, and the variational variable is a pair `(γ, α)`
//! of one-body and pairing density matrices constrained by `0 ≤ Γ ≤ 1` for the
//! block matrix `Γ = [[γ, α], [α*, 1-γ̄]]`.
//!
//! The crates provides:
//! - the spectral lattice discretization ([`lattice`]),
//! - admissible quasi-free states and their diagnostics ([`state`]),
//! - the HFB energy, mean-field and Bogoliubov-de Gennes operators ([`energy`]),
//! - self-consistent-field ground-state solvers ([`scf`]),
//! - two-body spectral quantities and operator-inequality checks ([`spectral`]),
//! - gravitational-collapse classification and scans ([`collapse`]),
//! - time-dependent HFB propagation ([`tdhfb`]),
//! - an invariant battery over random admissible states ([`verify`]),
//! - a binary state container ([`container`]).

pub mod collapse;
pub mod container;
pub mod energy;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod scf;
pub mod spectral;
pub mod state;
pub mod tdhfb;
pub mod verify;

pub use error::Error;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Cap faer's internal parallelism from the `HFB_THREADS` environment
/// variable. Call once at program start; defaults to sequential execution
/// so that runs are reproducible on any host.
pub fn init_parallelism() {
    let threads = std::env::var("HFB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(1);
    if threads <= 1 {
        faer::set_global_parallelism(faer::Par::Seq);
    } else {
        faer::set_global_parallelism(faer::Par::rayon(threads));
    }
}
