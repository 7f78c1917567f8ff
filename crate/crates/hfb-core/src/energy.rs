//! The HFB energy and its operators.
//!
//! In the orthonormal site-spin basis all four terms are plain matrix sums:
//!
//! - kinetic   `tr(Tγ)`
//! - direct    `-(κ/2) Σ_{x,y} W(x-y) n(x) n(y)` with `n(x) = Σ_s γ((x,s),(x,s))`
//! - exchange  `+(κ/2) Σ_{x,y} W(x-y) |γ(x,y)|²` (Frobenius over the q×q spin block)
//! - pairing   `-(κ/2) Σ_{x,y} W(x-y) |α(x,y)|²`
//!
//! The massless total replaces `T = √(-Δ+m²) - m` by `√(-Δ)` and keeps the
//! interaction terms. Pairwise sums are evaluated as direct double sums; the
//! direct term is additionally available through a Fourier convolution for
//! cross-checking.

use crate::error::Error;
use crate::lattice::Lattice;
use crate::linalg::{self, C64, CMat, RMat};
use crate::state::QuasiFreeState;
use crate::Result;

/// Admissibility tolerance used when `energy` is asked to validate its input.
pub const ENERGY_ADMISSIBILITY_TOL: f64 = 1e-9;

/// Signed energy contributions; `total = kinetic + direct + exchange +
/// pairing` for the selected functional, `massless_total` always refers to
/// the `√(-Δ)` kinetic term.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub direct: f64,
    pub exchange: f64,
    pub pairing: f64,
    pub total: f64,
    pub massless_total: f64,
    /// `true` when `kinetic`/`total` refer to the massless functional.
    pub massless: bool,
    /// Shared dropped-zero-mode constant `(κ/2)·(ξ/L)·λ²`; subtract from
    /// `total` when comparing energies across different particle numbers.
    pub background_correction: f64,
}

impl EnergyBreakdown {
    /// Total with the neutralizing-background constant removed, comparable
    /// across particle numbers.
    pub fn comparable_total(&self) -> f64 {
        self.total - self.background_correction
    }
}

/// `2M×2M` HFB mean-field block matrix `F_Γ - μN` with
/// `F_Γ = [[H_γ, Π], [Π*, -H̄_γ]]`, `Π(x,y) = -κ W(x-y) α(x,y)` and
/// `N = diag(1, -1)`.
pub struct BdgOperator {
    pub matrix: CMat,
    pub mu: f64,
}

#[inline]
fn spin_block_norm_sqr(m: &CMat, x: usize, y: usize, q: usize) -> f64 {
    let mut s = 0.0;
    for sp in 0..q {
        for sq in 0..q {
            s += m[(x * q + sp, y * q + sq)].norm_sqr();
        }
    }
    s
}

/// Kinetic contraction `tr(A γ)` of a site-level circulant profile expanded
/// over spin against a Hermitian `γ`.
fn profile_trace(lattice: &Lattice, profile: &[f64], gamma: &CMat) -> f64 {
    let q = lattice.spin();
    let ns = lattice.n_sites;
    let mut acc = 0.0;
    for y in 0..ns {
        for x in 0..ns {
            let p = profile[lattice.diff_index(x, y)];
            if p == 0.0 {
                continue;
            }
            let mut d = 0.0;
            for s in 0..q {
                d += gamma[(y * q + s, x * q + s)].re;
            }
            acc += p * d;
        }
    }
    acc
}

/// The three interaction sums `(D, Ex, P)` without coupling prefactors.
pub fn interaction_sums(state: &QuasiFreeState) -> (f64, f64, f64) {
    let lat = &state.lattice;
    let q = lat.spin();
    let ns = lat.n_sites;
    let n = state.site_occupancy();
    let mut d = 0.0;
    let mut ex = 0.0;
    let mut pr = 0.0;
    for y in 0..ns {
        for x in 0..ns {
            let w = lat.w_kernel[lat.diff_index(x, y)];
            if w == 0.0 {
                continue;
            }
            d += w * n[x] * n[y];
            ex += w * spin_block_norm_sqr(&state.gamma, x, y, q);
            pr += w * spin_block_norm_sqr(&state.alpha, x, y, q);
        }
    }
    (d, ex, pr)
}

/// Direct sum `Σ_{x,y} W(x-y) n(x) n(y)` via Fourier convolution, used as an
/// independent cross-check of the double-sum evaluation.
pub fn direct_sum_fft(lattice: &Lattice, occupancy: &[f64]) -> Result<f64> {
    if occupancy.len() != lattice.n_sites {
        return Err(Error::Shape("direct_sum_fft: occupancy must have N³ entries".into()));
    }
    let mut buf: Vec<C64> = occupancy.iter().map(|&v| C64::new(v, 0.0)).collect();
    lattice.fft3(&mut buf, true);
    let mut w_hat: Vec<C64> = lattice.w_kernel.iter().map(|&v| C64::new(v, 0.0)).collect();
    lattice.fft3(&mut w_hat, true);
    // Σ_{x,y} W(x-y) n(x) n(y) = (1/N³) Σ_k Ŵ(k) |n̂(k)|²
    let norm = 1.0 / lattice.n_sites as f64;
    Ok(buf
        .iter()
        .zip(w_hat.iter())
        .map(|(nk, wk)| wk.re * nk.norm_sqr() * norm)
        .sum())
}

/// Evaluate the energy breakdown.
///
/// With `force = false` the state is validated first and inadmissible states
/// are rejected; solvers that maintain feasibility by construction evaluate
/// with `force = true` (also needed for scan diagnostics on drifted states).
pub fn energy(state: &QuasiFreeState, massless: bool, force: bool) -> Result<EnergyBreakdown> {
    if !force {
        let rep = state.check_admissible(ENERGY_ADMISSIBILITY_TOL);
        if !rep.admissible {
            return Err(Error::Inadmissible(format!(
                "energy: state fails admissibility at {ENERGY_ADMISSIBILITY_TOL:.1e} \
                 (constraint min eig {:.3e}, γ range [{:.3e}, {:.3e}])",
                rep.constraint_min_eigenvalue,
                rep.gamma_min_eigenvalue,
                rep.gamma_max_eigenvalue
            )));
        }
    }
    let lat = &state.lattice;
    let kappa = lat.config.coupling;
    let massive_profile = lat.multiplier_profile(&lat.t_massive);
    let massless_profile = lat.multiplier_profile(&lat.t_massless);
    let kin_massive = profile_trace(lat, &massive_profile, &state.gamma);
    let kin_massless = profile_trace(lat, &massless_profile, &state.gamma);
    let (d, ex, pr) = interaction_sums(state);
    let direct = -0.5 * kappa * d;
    let exchange = 0.5 * kappa * ex;
    let pairing = -0.5 * kappa * pr;
    let interactions = direct + exchange + pairing;
    let lambda = state.trace_gamma();
    let background_correction =
        0.5 * kappa * lat.background_offset * lambda * lambda;
    let kinetic = if massless { kin_massless } else { kin_massive };
    Ok(EnergyBreakdown {
        kinetic,
        direct,
        exchange,
        pairing,
        total: kinetic + interactions,
        massless_total: kin_massless + interactions,
        massless,
        background_correction,
    })
}

/// Auxiliary functional `𝒢(γ,α) = tr(Kγ) - (κ/2) Σ W |α|²` with
/// `K = √(-Δ+m²)`, plus the Hardy-Kato lower-bound witness
/// `tr(Kγ)·(1 - κπ/4)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AuxiliaryEnergy {
    pub value: f64,
    pub kinetic_k: f64,
    pub kato_margin: f64,
}

pub fn auxiliary_energy(state: &QuasiFreeState) -> AuxiliaryEnergy {
    let lat = &state.lattice;
    let kappa = lat.config.coupling;
    let profile = lat.multiplier_profile(&lat.k_massive);
    let kin = profile_trace(lat, &profile, &state.gamma);
    let (_, _, pr) = interaction_sums(state);
    AuxiliaryEnergy {
        value: kin - 0.5 * kappa * pr,
        kinetic_k: kin,
        kato_margin: kin * (1.0 - kappa * std::f64::consts::PI / 4.0),
    }
}

/// Mean-field operator `H_γ = T - κ·diag(W∗n) + κ·W(x-y)·γ(x,y)`.
pub fn mean_field(state: &QuasiFreeState, massless: bool) -> CMat {
    let lat = &state.lattice;
    let kappa = lat.config.coupling;
    let q = lat.spin();
    let ns = lat.n_sites;
    let table = if massless {
        &lat.t_massless
    } else {
        &lat.t_massive
    };
    let profile = lat.multiplier_profile(table);
    let n = state.site_occupancy();
    // direct potential (W ∗ n)(x)
    let mut v_dir = vec![0.0; ns];
    for x in 0..ns {
        let mut acc = 0.0;
        for y in 0..ns {
            acc += lat.w_kernel[lat.diff_index(x, y)] * n[y];
        }
        v_dir[x] = acc;
    }
    let m = lat.dim;
    let mut h = CMat::zeros(m, m);
    for y in 0..ns {
        for x in 0..ns {
            let t = profile[lat.diff_index(x, y)];
            let w = kappa * lat.w_kernel[lat.diff_index(x, y)];
            for sp in 0..q {
                for sq in 0..q {
                    let mut v = w * state.gamma[(x * q + sp, y * q + sq)];
                    if sp == sq {
                        v += t;
                        if x == y {
                            v -= kappa * v_dir[x];
                        }
                    }
                    h[(x * q + sp, y * q + sq)] = v;
                }
            }
        }
    }
    h
}

/// Pairing block `Π(x,y) = -κ W(x-y) α(x,y)`.
pub fn pairing_field(state: &QuasiFreeState) -> CMat {
    let lat = &state.lattice;
    let kappa = lat.config.coupling;
    let q = lat.spin();
    let ns = lat.n_sites;
    let m = lat.dim;
    let mut pi = CMat::zeros(m, m);
    for y in 0..ns {
        for x in 0..ns {
            let w = -kappa * lat.w_kernel[lat.diff_index(x, y)];
            if w == 0.0 {
                continue;
            }
            for sp in 0..q {
                for sq in 0..q {
                    pi[(x * q + sp, y * q + sq)] = w * state.alpha[(x * q + sp, y * q + sq)];
                }
            }
        }
    }
    pi
}

/// Assemble `F_Γ - μN` from mean-field and pairing blocks.
pub fn assemble_bdg(h: &CMat, pi: &CMat, mu: f64) -> CMat {
    let m = h.nrows();
    let mut f = CMat::zeros(2 * m, 2 * m);
    for j in 0..m {
        for i in 0..m {
            f[(i, j)] = h[(i, j)] - if i == j { C64::new(mu, 0.0) } else { C64::new(0.0, 0.0) };
            f[(i, m + j)] = pi[(i, j)];
            f[(m + i, j)] = pi[(j, i)].conj();
            f[(m + i, m + j)] = -h[(i, j)].conj()
                + if i == j {
                    C64::new(mu, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                };
        }
    }
    f
}

/// Bogoliubov-de Gennes operator `F_Γ - μN` for a state.
pub fn bdg_operator(state: &QuasiFreeState, mu: f64, massless: bool) -> BdgOperator {
    let h = mean_field(state, massless);
    let pi = pairing_field(state);
    BdgOperator {
        matrix: assemble_bdg(&h, &pi, mu),
        mu,
    }
}

/// Reduced (no-spin) energy `F(τ)` of the q=2 reduction:
/// `F(τ) = tr(Tτ) - κ D(ρ_τ,ρ_τ) + (κ/2) Ex(τ) - (κ/2) Σ W |√(τ(1-τ))(x,y)|²`
/// for a real symmetric `τ` with spectrum in `[0,1]` on the site lattice.
pub fn reduced_energy(lattice: &Lattice, tau: &RMat) -> Result<f64> {
    let ns = lattice.n_sites;
    if tau.nrows() != ns || tau.ncols() != ns {
        return Err(Error::Shape(format!(
            "reduced_energy: τ must be N³×N³ = {ns}×{ns}"
        )));
    }
    let sym_defect = linalg::frob_real(&(tau - &tau.transpose().to_owned()));
    if sym_defect > 1e-10 * (1.0 + linalg::frob_real(tau)) {
        return Err(Error::Domain(format!(
            "reduced_energy: τ not symmetric (defect {sym_defect:.3e})"
        )));
    }
    let (vals, vecs) = linalg::eigh_real(tau);
    if vals.first().copied().unwrap_or(0.0) < -1e-9
        || vals.last().copied().unwrap_or(0.0) > 1.0 + 1e-9
    {
        return Err(Error::Domain(format!(
            "reduced_energy: τ spectrum [{:.3e}, {:.3e}] outside [0,1]",
            vals[0],
            vals[vals.len() - 1]
        )));
    }
    // √(τ(1-τ)) by eigendecomposition with clipping against round-off
    let mut root = RMat::zeros(ns, ns);
    for c in 0..ns {
        let t = vals[c].clamp(0.0, 1.0);
        let w = (t * (1.0 - t)).max(0.0).sqrt();
        if w == 0.0 {
            continue;
        }
        for r in 0..ns {
            root[(r, c)] = vecs[(r, c)] * w;
        }
    }
    let sqrt_mat = {
        let mut v = RMat::zeros(ns, ns);
        for c in 0..ns {
            for r in 0..ns {
                v[(r, c)] = vecs[(r, c)];
            }
        }
        &root * v.transpose()
    };
    let kappa = lattice.config.coupling;
    let profile = lattice.multiplier_profile(&lattice.t_massive);
    let mut kin = 0.0;
    let mut d = 0.0;
    let mut ex = 0.0;
    let mut pair = 0.0;
    for y in 0..ns {
        for x in 0..ns {
            let di = lattice.diff_index(x, y);
            kin += profile[di] * tau[(y, x)];
            let w = lattice.w_kernel[di];
            if w != 0.0 {
                d += w * tau[(x, x)] * tau[(y, y)];
                ex += w * tau[(x, y)] * tau[(x, y)];
                pair += w * sqrt_mat[(x, y)] * sqrt_mat[(x, y)];
            }
        }
    }
    Ok(kin - kappa * d + 0.5 * kappa * ex - 0.5 * kappa * pair)
}

/// Spin-traced site matrix `τ(x,y) = (1/2) Σ_s γ((x,s),(y,s))` of a q=2 state
/// together with its deviation from exact spin proportionality
/// `γ = τ ⊗ I₂` and the pairing-structure defect
/// `‖αα* - (τ(1-τ)) ⊗ I₂‖_F`.
pub struct SpinReduction {
    pub tau: RMat,
    pub spin_proportionality_defect: f64,
    pub pairing_structure_defect: f64,
}

pub fn spin_reduction(state: &QuasiFreeState) -> Result<SpinReduction> {
    let lat = &state.lattice;
    if lat.spin() != 2 {
        return Err(Error::Domain("spin_reduction requires q = 2".into()));
    }
    let ns = lat.n_sites;
    let mut tau = RMat::zeros(ns, ns);
    let mut defect2 = 0.0;
    for y in 0..ns {
        for x in 0..ns {
            let g00 = state.gamma[(2 * x, 2 * y)];
            let g11 = state.gamma[(2 * x + 1, 2 * y + 1)];
            let g01 = state.gamma[(2 * x, 2 * y + 1)];
            let g10 = state.gamma[(2 * x + 1, 2 * y)];
            let t = 0.5 * (g00 + g11);
            tau[(x, y)] = t.re;
            defect2 += (g00 - t).norm_sqr()
                + (g11 - t).norm_sqr()
                + g01.norm_sqr()
                + g10.norm_sqr()
                + t.im * t.im;
        }
    }
    // αα* vs (τ(1-τ)) ⊗ I₂
    let aa = &state.alpha * &linalg::adjoint(&state.alpha);
    let tau_c = linalg::to_complex(&tau);
    let t1t = &tau_c - &(&tau_c * &tau_c);
    let mut pairing2 = 0.0;
    for y in 0..ns {
        for x in 0..ns {
            for sp in 0..2 {
                for sq in 0..2 {
                    let expect = if sp == sq {
                        t1t[(x, y)]
                    } else {
                        C64::new(0.0, 0.0)
                    };
                    pairing2 += (aa[(2 * x + sp, 2 * y + sq)] - expect).norm_sqr();
                }
            }
        }
    }
    Ok(SpinReduction {
        tau,
        spin_proportionality_defect: defect2.sqrt(),
        pairing_structure_defect: pairing2.sqrt(),
    })
}
