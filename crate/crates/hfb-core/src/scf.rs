//! Self-consistent-field solvers.
//!
//! `hfb_minimize` solves the constrained ground-state problem
//! `I(λ) = inf { E(γ,α) : tr γ = λ }` by the damped fixed-point iteration on
//! the nonlinear equation `Γ = χ_{(-∞,0)}(F_Γ - μN) + D`: assemble the
//! Bogoliubov-de Gennes operator, project onto its negative spectral
//! subspace with the chemical potential `μ` root-found so that `tr γ = λ`
//! (fractionally filling any zero-eigenvalue subspace), then take a damped
//! step with energy backtracking.
//!
//! `hf_minimize` is the rank-`N` projector (Hartree-Fock) variant, and
//! `gradient_projection_minimize` is an independent projected-gradient
//! optimizer used as a cross-check oracle on small lattices.

use crate::energy::{self, assemble_bdg, mean_field, pairing_field, EnergyBreakdown};
use crate::error::Error;
use crate::lattice::Lattice;
use crate::linalg::{self, eigh, weighted_projector, C64, CMat, Eigh};
use crate::state::QuasiFreeState;
use crate::Result;
use std::sync::Arc;

/// Initial iterate for the SCF loop.
#[derive(Clone)]
pub enum InitKind {
    /// Gaussian-localized orbitals at the box center (breaks translation
    /// invariance deliberately; the torus minimizer would otherwise wander).
    /// `width` defaults to `L/8`.
    LocalizedGaussian { width: Option<f64> },
    /// Fractional Aufbau filling of the lowest kinetic plane waves.
    PlaneWave,
    /// Warm start from a provided state (trace is renormalized to `λ`).
    Provided(QuasiFreeState),
}

#[derive(Clone)]
pub struct SCFOptions {
    pub max_iterations: usize,
    /// Initial damping `t ∈ (0,1]`; backtracking halves it while the energy
    /// increases.
    pub damping: f64,
    /// Stop when the accepted energy decrease falls below this. `None`
    /// resolves to `1e-9·max(m, 2π/L)·max(1, λ)`.
    pub energy_tolerance: Option<f64>,
    pub residual_tolerance: f64,
    /// Global chemical-potential bracket; `None` resolves to
    /// `[-10·max(m,2π/L)·(1+κλ^{2/3}), 0]`.
    pub mu_bracket: Option<(f64, f64)>,
    /// Tolerance on `|tr γ - λ|` inside the μ root-find.
    pub trace_tolerance: f64,
    pub init: InitKind,
    /// Antisymmetric pairing seed amplitude; `None` resolves to `1e-2·λ/M`.
    /// The `α = 0` manifold is SCF-invariant, so without a seed the solver
    /// can never discover pairing.
    pub pairing_seed: Option<f64>,
    /// Minimize the massless functional (`√(-Δ)` kinetic term).
    pub massless: bool,
    /// Compute the two-body reference eigenvalue β at convergence when
    /// pairing is present (feeds the `μ < β - m` bound check).
    pub beta_reference: bool,
}

impl Default for SCFOptions {
    fn default() -> Self {
        SCFOptions {
            max_iterations: 500,
            damping: 0.5,
            energy_tolerance: None,
            residual_tolerance: 1e-7,
            mu_bracket: None,
            trace_tolerance: 1e-10,
            init: InitKind::LocalizedGaussian { width: None },
            pairing_seed: None,
            massless: false,
            beta_reference: true,
        }
    }
}

impl SCFOptions {
    pub fn resolved_energy_tolerance(&self, lattice: &Lattice, lambda: f64) -> f64 {
        self.energy_tolerance
            .unwrap_or_else(|| 1e-9 * energy_scale(lattice) * lambda.max(1.0))
    }
}

/// Natural energy scale: the mass when present, else the lowest nonzero mode.
pub fn energy_scale(lattice: &Lattice) -> f64 {
    let ir = 2.0 * std::f64::consts::PI / lattice.config.box_length;
    lattice.config.mass.max(ir)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    /// `‖[F_Γ - μN, Γ]‖_F` of the iterate at the start of the iteration.
    pub residual: f64,
    pub mu: f64,
    pub trace_gamma: f64,
    pub alpha_norm: f64,
}

#[derive(Debug)]
pub struct SCFResult {
    pub state: QuasiFreeState,
    pub mu: f64,
    pub energy: EnergyBreakdown,
    pub history: Vec<IterationRecord>,
    pub stationarity_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Orbital eigenvalues (Hartree-Fock solves only).
    pub orbital_energies: Option<Vec<f64>>,
    /// Two-body reference eigenvalue at matching `(κ, m, q, lattice)`.
    pub beta_reference: Option<f64>,
    pub mu_negative: bool,
    /// `μ < β - m` whenever `‖α‖_F > 1e-6`; `None` when not applicable.
    pub mu_below_beta_minus_m: Option<bool>,
    /// Density max/mean ratio below 2: the iterate spreads over the whole
    /// box (the no-minimizer signature of `I^HF(1)` on the torus).
    pub delocalized: bool,
    pub energy_tolerance: f64,
    pub residual_tolerance: f64,
    pub wall_time_s: f64,
}

/// Stationarity residual `‖[F_Γ - μN, Γ]‖_F` of a state.
pub fn stationarity_residual(state: &QuasiFreeState, mu: f64, massless: bool) -> f64 {
    let bdg = energy::bdg_operator(state, mu, massless);
    let big = state.big_gamma();
    linalg::commutator_frob(&bdg.matrix, &big)
}

// ---------------------------------------------------------------------------
// Negative-spectral-subspace fill with the chemical potential root-find
// ---------------------------------------------------------------------------

/// Result of projecting onto the negative subspace of `F - μN` at one μ.
struct BdgFillOutcome {
    gamma: CMat,
    alpha: CMat,
    trace: f64,
    /// exact kernel fill applied
    exact: bool,
}

/// Particle-hole conjugation used to pair zero modes: maps `v = (v₁, v₂)` to
/// `(conj v₂, s·conj v₁)` with `s = 1` for the full BdG block structure and
/// `s = -1` for the spin-factorized q=2 blocks (symmetric pairing block).
fn ph_conjugate(v: &[C64], m: usize, sign: f64) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); 2 * m];
    for i in 0..m {
        out[i] = v[m + i].conj();
        out[m + i] = v[i].conj() * sign;
    }
    out
}

/// Occupy the strictly negative modes of an eigendecomposition of `F - μN`
/// (a `2m×2m` matrix) and fractionally fill the zero-eigenvalue subspace,
/// uniformly over particle-hole pairs, to meet the target particle trace
/// exactly when it lies within the kernel's capacity.
fn bdg_fill(e: &Eigh, m: usize, target: f64, kernel_tol: f64, ph_sign: f64) -> BdgFillOutcome {
    let n2 = e.dim();
    debug_assert_eq!(n2, 2 * m);
    let mut weights = vec![0.0f64; n2];
    let mut occupied_trace = 0.0;
    let mut kernel: Vec<usize> = Vec::new();
    let particle_norm = |col: usize| -> f64 {
        let mut a = 0.0;
        for i in 0..m {
            a += e.vectors[(i, col)].norm_sqr();
        }
        a
    };
    for i in 0..n2 {
        if e.values[i] < -kernel_tol {
            weights[i] = 1.0;
            occupied_trace += particle_norm(i);
        } else if e.values[i] <= kernel_tol {
            kernel.push(i);
        }
    }
    let deficit = target - occupied_trace;
    let mut exact = false;
    let mut extra: Option<CMat> = None;
    if !kernel.is_empty() && deficit > -1e-12 {
        // particle-like kernel vectors; their conjugate partners are the
        // hole-like ones, so fill pairs (u, Cu) with weights (ν, 1-ν)
        let particle_like: Vec<usize> = kernel
            .iter()
            .copied()
            .filter(|&i| particle_norm(i) > 0.99)
            .collect();
        let k = particle_like.len();
        if k > 0 && deficit <= k as f64 + 1e-12 {
            let nu = (deficit / k as f64).clamp(0.0, 1.0);
            exact = true;
            let mut fill = CMat::zeros(n2, n2);
            for &i in &particle_like {
                let u: Vec<C64> = (0..n2).map(|r| e.vectors[(r, i)]).collect();
                let cu = ph_conjugate(&u, m, ph_sign);
                for c in 0..n2 {
                    for r in 0..n2 {
                        fill[(r, c)] +=
                            nu * u[r] * u[c].conj() + (1.0 - nu) * cu[r] * cu[c].conj();
                    }
                }
            }
            extra = Some(fill);
        } else if deficit.abs() <= 1e-12 * (1.0 + target) {
            exact = true;
        }
    } else if deficit.abs() <= 1e-12 * (1.0 + target) {
        exact = true;
    }
    let mut proj = weighted_projector(e, &weights);
    if let Some(fill) = extra {
        proj = &proj + &fill;
    }
    let gamma = CMat::from_fn(m, m, |i, j| proj[(i, j)]);
    let alpha = CMat::from_fn(m, m, |i, j| proj[(i, m + j)]);
    let trace = linalg::trace_re(&gamma);
    BdgFillOutcome {
        gamma,
        alpha,
        trace,
        exact,
    }
}

/// Detected spin-product structure of a q=2 mean field: `H = h ⊗ I₂` and
/// `Π = p ⊗ ε` with `ε = [[0,1],[-1,0]]`; the BdG eigenproblem then
/// factorizes into one site-level block of half the dimension.
fn spin_factorized_blocks(lattice: &Lattice, h: &CMat, pi: &CMat) -> Option<(CMat, CMat)> {
    if lattice.spin() != 2 {
        return None;
    }
    let ns = lattice.n_sites;
    let tol = 1e-11 * (1.0 + linalg::frob(h) + linalg::frob(pi));
    let mut hs = CMat::zeros(ns, ns);
    let mut ps = CMat::zeros(ns, ns);
    for y in 0..ns {
        for x in 0..ns {
            let h00 = h[(2 * x, 2 * y)];
            let h11 = h[(2 * x + 1, 2 * y + 1)];
            if (h00 - h11).norm() > tol
                || h[(2 * x, 2 * y + 1)].norm() > tol
                || h[(2 * x + 1, 2 * y)].norm() > tol
            {
                return None;
            }
            let p01 = pi[(2 * x, 2 * y + 1)];
            let p10 = pi[(2 * x + 1, 2 * y)];
            if (p01 + p10).norm() > tol
                || pi[(2 * x, 2 * y)].norm() > tol
                || pi[(2 * x + 1, 2 * y + 1)].norm() > tol
            {
                return None;
            }
            hs[(x, y)] = h00;
            ps[(x, y)] = p01;
        }
    }
    Some((hs, ps))
}

/// Expand site-level `(τ, σ)` back to spin space: `γ = τ ⊗ I₂`,
/// `α = σ ⊗ [[0,1],[-1,0]]`.
fn expand_q2(lattice: &Lattice, tau: &CMat, sigma: &CMat) -> (CMat, CMat) {
    let ns = lattice.n_sites;
    let m = lattice.dim;
    let mut gamma = CMat::zeros(m, m);
    let mut alpha = CMat::zeros(m, m);
    for y in 0..ns {
        for x in 0..ns {
            gamma[(2 * x, 2 * y)] = tau[(x, y)];
            gamma[(2 * x + 1, 2 * y + 1)] = tau[(x, y)];
            alpha[(2 * x, 2 * y + 1)] = sigma[(x, y)];
            alpha[(2 * x + 1, 2 * y)] = -sigma[(x, y)];
        }
    }
    (gamma, alpha)
}

struct MuSolve {
    mu: f64,
    gamma: CMat,
    alpha: CMat,
}

/// Root-find the chemical potential so that the negative-subspace projector
/// of `F - μN` carries `tr γ = λ`. Brent steps on a bracket (warm-started
/// from the previous iteration), with kernel filling absorbing the Aufbau
/// jumps of gapless spectra.
fn solve_mu(
    lattice: &Lattice,
    h: &CMat,
    pi: &CMat,
    lambda: f64,
    global_bracket: (f64, f64),
    warm: Option<f64>,
    trace_tol: f64,
) -> Result<MuSolve> {
    let scale = energy_scale(lattice);
    let kernel_tol = 1e-9 * scale;
    let factorized = spin_factorized_blocks(lattice, h, pi);
    let (block_m, target) = match &factorized {
        Some(_) => (lattice.n_sites, lambda / 2.0),
        None => (lattice.dim, lambda),
    };
    let ph_sign = if factorized.is_some() { -1.0 } else { 1.0 };

    let eval = |mu: f64| -> BdgFillOutcome {
        let f = match &factorized {
            Some((hs, ps)) => {
                let mut f = CMat::zeros(2 * block_m, 2 * block_m);
                for j in 0..block_m {
                    for i in 0..block_m {
                        let shift = if i == j {
                            C64::new(mu, 0.0)
                        } else {
                            C64::new(0.0, 0.0)
                        };
                        f[(i, j)] = hs[(i, j)] - shift;
                        f[(i, block_m + j)] = ps[(i, j)];
                        f[(block_m + i, j)] = ps[(j, i)].conj();
                        f[(block_m + i, block_m + j)] = -(hs[(i, j)] - shift).conj();
                    }
                }
                f
            }
            None => assemble_bdg(h, pi, mu),
        };
        let e = eigh(&f);
        bdg_fill(&e, block_m, target, kernel_tol, ph_sign)
    };

    let finish = |mu: f64, out: BdgFillOutcome| -> MuSolve {
        let (gamma, alpha) = match &factorized {
            Some(_) => expand_q2(lattice, &out.gamma, &out.alpha),
            None => (out.gamma, out.alpha),
        };
        MuSolve { mu, gamma, alpha }
    };
    let solved = |o: &BdgFillOutcome| o.exact && (o.trace - target).abs() <= trace_tol.max(1e-12);

    // establish a bracket, warm-started near the previous μ
    let (mut lo, mut hi);
    if let Some(mu0) = warm {
        let w = (0.05 * mu0.abs()).max(1e-3 * scale);
        lo = mu0 - w;
        hi = mu0 + w;
    } else {
        lo = global_bracket.0;
        hi = global_bracket.1;
    }
    let mut o_lo = eval(lo);
    if solved(&o_lo) {
        return Ok(finish(lo, o_lo));
    }
    let mut o_hi = eval(hi);
    if solved(&o_hi) {
        return Ok(finish(hi, o_hi));
    }
    // widen towards (and then beyond) the global bracket, at most 5 times
    // beyond it
    let mut widenings = 0;
    let mut span = (hi - lo).max(1e-3 * scale);
    while o_lo.trace > target || o_hi.trace < target {
        if o_lo.trace > target {
            lo = (lo - 2.0 * span).min(global_bracket.0.min(lo));
            o_lo = eval(lo);
            if solved(&o_lo) {
                return Ok(finish(lo, o_lo));
            }
        }
        if o_hi.trace < target {
            hi = (hi + 0.7 * span).max(global_bracket.1.max(hi));
            o_hi = eval(hi);
            if solved(&o_hi) {
                return Ok(finish(hi, o_hi));
            }
        }
        span *= 3.0;
        if lo <= global_bracket.0 && hi >= global_bracket.1 {
            widenings += 1;
            if widenings > 5 {
                return Err(Error::MultiplierBracket {
                    widenings: widenings - 1,
                    tr_lo: o_lo.trace * if factorized.is_some() { 2.0 } else { 1.0 },
                    tr_hi: o_hi.trace * if factorized.is_some() { 2.0 } else { 1.0 },
                    lambda,
                });
            }
        }
    }
    // Secant/bisection refinement on g(μ) = trace(μ) - target, keeping both
    // bracketing projector outcomes for the final fill
    let (mut a, mut b) = (lo, hi);
    let mut out_a = o_lo;
    let mut out_b = o_hi;
    for _ in 0..120 {
        let (fa, fb) = (out_a.trace - target, out_b.trace - target);
        if fa.abs() <= trace_tol {
            return Ok(finish(a, out_a));
        }
        if fb.abs() <= trace_tol {
            return Ok(finish(b, out_b));
        }
        let mu_res = 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1e-3 * scale);
        if (b - a).abs() <= mu_res {
            break;
        }
        // secant guess kept strictly inside the bracket
        let x_sec = b - fb * (b - a) / (fb - fa);
        let margin = 0.1 * (b - a);
        let x = if x_sec.is_finite() && x_sec > a + margin && x_sec < b - margin {
            x_sec
        } else {
            0.5 * (a + b)
        };
        let o = eval(x);
        if solved(&o) {
            return Ok(finish(x, o));
        }
        if o.trace - target < 0.0 {
            a = x;
            out_a = o;
        } else {
            b = x;
            out_b = o;
        }
    }
    // the trace jump is steeper than the μ resolution: fill the crossing
    // fractionally by the convex combination of the bracketing projectors
    // (admissible, with tr γ = λ exactly)
    let (fa, fb) = (out_a.trace - target, out_b.trace - target);
    let gap = fb - fa;
    if gap > 0.0 && fa <= 0.0 && fb >= 0.0 {
        let theta = (-fa / gap).clamp(0.0, 1.0);
        let n = out_a.gamma.nrows();
        let gamma = CMat::from_fn(n, n, |i, j| {
            out_a.gamma[(i, j)] * (1.0 - theta) + out_b.gamma[(i, j)] * theta
        });
        let alpha = CMat::from_fn(n, n, |i, j| {
            out_a.alpha[(i, j)] * (1.0 - theta) + out_b.alpha[(i, j)] * theta
        });
        let trace = out_a.trace * (1.0 - theta) + out_b.trace * theta;
        let mu = a * (1.0 - theta) + b * theta;
        return Ok(finish(
            mu,
            BdgFillOutcome {
                gamma,
                alpha,
                trace,
                exact: true,
            },
        ));
    }
    Err(Error::MultiplierBracket {
        widenings,
        tr_lo: (fa + target) * if factorized.is_some() { 2.0 } else { 1.0 },
        tr_hi: (fb + target) * if factorized.is_some() { 2.0 } else { 1.0 },
        lambda,
    })
}

// ---------------------------------------------------------------------------
// Initial iterates
// ---------------------------------------------------------------------------

fn gaussian_orbital(lattice: &Lattice, width: f64, mode: usize, spin: usize) -> Vec<C64> {
    let m = lattice.dim;
    let q = lattice.spin();
    let center = lattice.site_position(lattice.center_site());
    let l = lattice.config.box_length;
    let n = lattice.points_per_dim();
    let two_pi_over_l = 2.0 * std::f64::consts::PI / l;
    // modulating plane wave from the FFT-ordered mode index
    let iz = mode % n;
    let iy = (mode / n) % n;
    let ix = mode / (n * n);
    let k = [
        two_pi_over_l * crate::lattice::fft_freq(ix, n) as f64,
        two_pi_over_l * crate::lattice::fft_freq(iy, n) as f64,
        two_pi_over_l * crate::lattice::fft_freq(iz, n) as f64,
    ];
    let mut v = vec![C64::new(0.0, 0.0); m];
    for s in 0..lattice.n_sites {
        let x = lattice.site_position(s);
        let r = lattice.torus_distance(x, center);
        let g = (-0.5 * (r / width).powi(2)).exp();
        let phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
        v[s * q + spin] = C64::from_polar(g, phase);
    }
    v
}

fn plane_wave_orbital(lattice: &Lattice, mode: usize, spin: usize) -> Vec<C64> {
    let m = lattice.dim;
    let q = lattice.spin();
    let n = lattice.points_per_dim();
    let l = lattice.config.box_length;
    let two_pi_over_l = 2.0 * std::f64::consts::PI / l;
    let iz = mode % n;
    let iy = (mode / n) % n;
    let ix = mode / (n * n);
    let k = [
        two_pi_over_l * crate::lattice::fft_freq(ix, n) as f64,
        two_pi_over_l * crate::lattice::fft_freq(iy, n) as f64,
        two_pi_over_l * crate::lattice::fft_freq(iz, n) as f64,
    ];
    let norm = 1.0 / (lattice.n_sites as f64).sqrt();
    let mut v = vec![C64::new(0.0, 0.0); m];
    for s in 0..lattice.n_sites {
        let x = lattice.site_position(s);
        v[s * q + spin] = C64::from_polar(norm, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]);
    }
    v
}

/// Mode indices sorted by massive kinetic multiplier (ascending), ties by
/// index for reproducibility.
fn modes_by_kinetic(lattice: &Lattice) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lattice.n_sites).collect();
    idx.sort_by(|&a, &b| {
        lattice.t_massive[a]
            .total_cmp(&lattice.t_massive[b])
            .then(a.cmp(&b))
    });
    idx
}

fn initial_state(lattice: &Arc<Lattice>, lambda: f64, opts: &SCFOptions) -> Result<QuasiFreeState> {
    let m = lattice.dim;
    let q = lattice.spin();
    if let InitKind::Provided(st) = &opts.init {
        let mut st = st.clone();
        if (st.trace_gamma() - lambda).abs() > 1e-12 * lambda.max(1.0) {
            force_trace(&mut st, lambda);
        }
        return Ok(st);
    }
    if lambda == 0.0 {
        return Ok(QuasiFreeState::zero(lattice.clone()));
    }
    let n_orb = ((lambda / 0.9).ceil() as usize).max(1).min(m);
    let fill = lambda / n_orb as f64;
    let modes = modes_by_kinetic(lattice);
    let mut basis = CMat::zeros(m, n_orb);
    for j in 0..n_orb {
        // interleave spins so that consecutive orbitals are time-reversed
        // partners (same spatial mode, opposite spin) when q > 1
        let mode = modes[(j / q) % lattice.n_sites];
        let spin = j % q;
        let v = match &opts.init {
            InitKind::LocalizedGaussian { width } => {
                let w = width.unwrap_or(lattice.config.box_length / 8.0);
                gaussian_orbital(lattice, w, mode, spin)
            }
            InitKind::PlaneWave => plane_wave_orbital(lattice, mode, spin),
            InitKind::Provided(_) => unreachable!(),
        };
        for i in 0..m {
            basis[(i, j)] = v[i];
        }
    }
    let qr = basis.qr();
    let v = qr.compute_thin_Q();
    let mut gamma = CMat::zeros(m, m);
    for j in 0..n_orb {
        for c in 0..m {
            for r in 0..m {
                gamma[(r, c)] += C64::new(fill, 0.0) * v[(r, j)] * v[(c, j)].conj();
            }
        }
    }
    // pairing seed: couple consecutive orbitals (same orbital with opposite
    // spins first, thanks to the interleaved order above)
    let amp = opts.pairing_seed.unwrap_or(1e-2 * lambda / m as f64);
    let mut alpha = CMat::zeros(m, m);
    if amp != 0.0 && n_orb >= 2 {
        for p in 0..n_orb / 2 {
            let (ja, jb) = (2 * p, 2 * p + 1);
            for c in 0..m {
                for r in 0..m {
                    let o = v[(r, ja)] * v[(c, jb)] - v[(r, jb)] * v[(c, ja)];
                    alpha[(r, c)] += C64::new(amp, 0.0) * o;
                }
            }
        }
    }
    let mut st = QuasiFreeState::new(lattice.clone(), gamma, alpha)?;
    st.reproject();
    if (st.trace_gamma() - lambda).abs() > 1e-9 * lambda.max(1.0) {
        force_trace(&mut st, lambda);
    }
    Ok(st)
}

/// Rescale occupations (with capping at 1) until `tr γ = λ`, then restore
/// the pairing constraint.
fn force_trace(state: &mut QuasiFreeState, lambda: f64) {
    let e = eigh(&state.gamma);
    let mut occ: Vec<f64> = e.values.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    let total: f64 = occ.iter().sum();
    if total <= 0.0 {
        let m = occ.len();
        occ = vec![(lambda / m as f64).min(1.0); m];
    }
    for _ in 0..200 {
        let total: f64 = occ.iter().sum();
        if (total - lambda).abs() <= 1e-13 * lambda.max(1.0) {
            break;
        }
        let free: f64 = occ.iter().filter(|&&x| x < 1.0).sum();
        if free <= 0.0 {
            break;
        }
        let corr = 1.0 + (lambda - total) / free;
        occ = occ
            .iter()
            .map(|&x| if x < 1.0 { (x * corr).clamp(0.0, 1.0) } else { x })
            .collect();
    }
    state.gamma = weighted_projector(&e, &occ);
    state.reproject();
}

// ---------------------------------------------------------------------------
// HFB ground-state solver
// ---------------------------------------------------------------------------

/// Minimize the HFB energy over `{(γ,α) admissible, tr γ = λ}`.
pub fn hfb_minimize(lambda: f64, lattice: &Arc<Lattice>, opts: &SCFOptions) -> Result<SCFResult> {
    let t0 = std::time::Instant::now();
    if lambda < 0.0 {
        return Err(Error::Range(format!("λ must be ≥ 0, got {lambda}")));
    }
    let m = lattice.dim;
    if lambda > m as f64 {
        return Err(Error::Range(format!(
            "λ = {lambda} not representable: exceeds q·N³ = {m}"
        )));
    }
    let e_tol = opts.resolved_energy_tolerance(lattice, lambda);
    let r_tol = opts.residual_tolerance;
    let massless = opts.massless;

    if lambda == 0.0 {
        let state = QuasiFreeState::zero(lattice.clone());
        let e = energy::energy(&state, massless, true)?;
        return Ok(SCFResult {
            stationarity_residual: 0.0,
            history: vec![IterationRecord {
                iteration: 0,
                energy: e.total,
                residual: 0.0,
                mu: 0.0,
                trace_gamma: 0.0,
                alpha_norm: 0.0,
            }],
            state,
            mu: 0.0,
            energy: e,
            converged: true,
            iterations: 1,
            orbital_energies: None,
            beta_reference: None,
            mu_negative: false,
            mu_below_beta_minus_m: None,
            delocalized: false,
            energy_tolerance: e_tol,
            residual_tolerance: r_tol,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }

    let scale = energy_scale(lattice);
    let global_bracket = opts.mu_bracket.unwrap_or((
        -10.0 * scale * (1.0 + lattice.config.coupling * lambda.powf(2.0 / 3.0)),
        0.0,
    ));

    let mut state = initial_state(lattice, lambda, opts)?;
    let mut e_curr = energy::energy(&state, massless, true)?.total;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut mu = 0.0f64;
    let mut warm: Option<f64> = None;
    let mut converged = false;
    let mut last_delta_e = f64::INFINITY;
    let mut best: Option<(f64, QuasiFreeState, f64)> = None;
    let mut iterations = 0;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let h = mean_field(&state, massless);
        let pi = pairing_field(&state);
        // residual of the current iterate under its own mean field
        let f_mat = assemble_bdg(&h, &pi, mu);
        let big = state.big_gamma();
        let residual = linalg::commutator_frob(&f_mat, &big);
        history.push(IterationRecord {
            iteration: iter,
            energy: e_curr,
            residual,
            mu,
            trace_gamma: state.trace_gamma(),
            alpha_norm: state.alpha_norm(),
        });
        if iter > 0 && last_delta_e.abs() <= e_tol && residual <= r_tol {
            converged = true;
            break;
        }
        let sol = solve_mu(
            lattice,
            &h,
            &pi,
            lambda,
            global_bracket,
            warm,
            opts.trace_tolerance,
        )?;
        mu = sol.mu;
        warm = Some(mu);
        // damped step with energy backtracking
        let mut t = opts.damping;
        let mut accepted = None;
        for _ in 0..14 {
            let gamma = CMat::from_fn(m, m, |i, j| {
                state.gamma[(i, j)] * (1.0 - t) + sol.gamma[(i, j)] * t
            });
            let alpha = CMat::from_fn(m, m, |i, j| {
                state.alpha[(i, j)] * (1.0 - t) + sol.alpha[(i, j)] * t
            });
            let trial = QuasiFreeState {
                lattice: lattice.clone(),
                gamma: linalg::hermitian_part(&gamma),
                alpha: linalg::antisymmetric_part(&alpha),
            };
            let e_trial = energy::energy(&trial, massless, true)?.total;
            if e_trial <= e_curr + 1e-14 * scale * lambda.max(1.0) {
                accepted = Some((trial, e_trial));
                break;
            }
            t *= 0.5;
        }
        let (next, e_next) = match accepted {
            Some(x) => x,
            // no decrease even at the smallest damping: keep the best iterate
            None => break,
        };
        last_delta_e = e_curr - e_next;
        state = next;
        e_curr = e_next;
        if best.as_ref().map(|(e, _, _)| e_curr < *e).unwrap_or(true) {
            best = Some((e_curr, state.clone(), mu));
        }
    }
    if let Some((e_best, st_best, mu_best)) = best {
        if e_best < e_curr {
            state = st_best;
            e_curr = e_best;
            mu = mu_best;
        }
    }
    let _ = e_curr;
    state.reproject();
    let final_energy = energy::energy(&state, massless, true)?;
    let final_residual = stationarity_residual(&state, mu, massless);
    let alpha_norm = state.alpha_norm();
    let (beta_reference, mu_below) = if opts.beta_reference && !massless {
        let beta = crate::spectral::beta_eigenvalue(lattice)?.beta;
        let below = if alpha_norm > 1e-6 {
            Some(mu < beta - lattice.config.mass)
        } else {
            None
        };
        (Some(beta), below)
    } else {
        (None, None)
    };
    let dens = state.density();
    let mean = dens.rho.iter().sum::<f64>() / dens.rho.len() as f64;
    let max = dens.rho.iter().cloned().fold(0.0f64, f64::max);
    let delocalized = mean > 0.0 && max / mean < 2.0;
    Ok(SCFResult {
        mu,
        history,
        stationarity_residual: final_residual,
        converged: converged && final_residual <= r_tol,
        iterations,
        orbital_energies: None,
        beta_reference,
        mu_negative: mu < 0.0,
        mu_below_beta_minus_m: mu_below,
        delocalized,
        energy_tolerance: e_tol,
        residual_tolerance: r_tol,
        wall_time_s: t0.elapsed().as_secs_f64(),
        energy: final_energy,
        state,
    })
}

// ---------------------------------------------------------------------------
// Hartree-Fock (rank-N projector) solver
// ---------------------------------------------------------------------------

/// Minimize over rank-`N` projectors with `α = 0`: Aufbau iteration filling
/// the `N` lowest eigenvectors of `H_γ`, damping on `γ` followed by
/// re-projection to the nearest rank-`N` projector.
pub fn hf_minimize(
    n_particles: usize,
    lattice: &Arc<Lattice>,
    opts: &SCFOptions,
) -> Result<SCFResult> {
    let t0 = std::time::Instant::now();
    let m = lattice.dim;
    if n_particles < 1 || n_particles > m {
        return Err(Error::Range(format!("N = {n_particles} outside 1..=M = {m}")));
    }
    let lambda = n_particles as f64;
    let e_tol = opts.resolved_energy_tolerance(lattice, lambda);
    let r_tol = opts.residual_tolerance;
    let massless = opts.massless;
    let mut opts_init = opts.clone();
    opts_init.pairing_seed = Some(0.0);
    let mut state = initial_state(lattice, lambda, &opts_init)?;
    // nearest rank-N projector: N dominant eigenvectors
    let round = |g: &CMat| -> CMat {
        let e = eigh(g);
        let mut w = vec![0.0; m];
        // eigh sorts ascending: take the top N
        for i in m - n_particles..m {
            w[i] = 1.0;
        }
        weighted_projector(&e, &w)
    };
    state.gamma = round(&state.gamma);
    state.alpha = CMat::zeros(m, m);
    let mut e_curr = energy::energy(&state, massless, true)?.total;
    let mut history = Vec::new();
    let mut converged = false;
    let mut last_delta_e = f64::INFINITY;
    let mut orbitals: Vec<f64> = Vec::new();
    let mut mu = 0.0;
    let mut iterations = 0;
    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let h = mean_field(&state, massless);
        let eh = eigh(&h);
        orbitals = eh.values.iter().take(n_particles).copied().collect();
        mu = orbitals.last().copied().unwrap_or(0.0);
        let residual = linalg::commutator_frob(&h, &state.gamma);
        history.push(IterationRecord {
            iteration: iter,
            energy: e_curr,
            residual,
            mu,
            trace_gamma: state.trace_gamma(),
            alpha_norm: 0.0,
        });
        if iter > 0 && last_delta_e.abs() <= e_tol && residual <= r_tol {
            converged = true;
            break;
        }
        let mut w = vec![0.0; m];
        for i in 0..n_particles {
            w[i] = 1.0;
        }
        let gamma_new = weighted_projector(&eh, &w);
        let mut t = opts.damping;
        let mut accepted = None;
        for _ in 0..14 {
            let mix = CMat::from_fn(m, m, |i, j| {
                state.gamma[(i, j)] * (1.0 - t) + gamma_new[(i, j)] * t
            });
            let proj = round(&linalg::hermitian_part(&mix));
            let trial = QuasiFreeState {
                lattice: lattice.clone(),
                gamma: proj,
                alpha: CMat::zeros(m, m),
            };
            let e_trial = energy::energy(&trial, massless, true)?.total;
            if e_trial <= e_curr + 1e-14 * energy_scale(lattice) * lambda {
                accepted = Some((trial, e_trial));
                break;
            }
            t *= 0.5;
        }
        let (next, e_next) = match accepted {
            Some(x) => x,
            None => break,
        };
        last_delta_e = e_curr - e_next;
        state = next;
        e_curr = e_next;
    }
    let final_energy = energy::energy(&state, massless, true)?;
    let final_residual = {
        let h = mean_field(&state, massless);
        linalg::commutator_frob(&h, &state.gamma)
    };
    let dens = state.density();
    let mean = dens.rho.iter().sum::<f64>() / dens.rho.len() as f64;
    let max = dens.rho.iter().cloned().fold(0.0f64, f64::max);
    let delocalized = mean > 0.0 && max / mean < 2.0;
    Ok(SCFResult {
        mu,
        stationarity_residual: final_residual,
        converged: converged && final_residual <= r_tol,
        iterations,
        orbital_energies: Some(orbitals),
        beta_reference: None,
        mu_negative: mu < 0.0,
        mu_below_beta_minus_m: None,
        delocalized,
        energy_tolerance: e_tol,
        residual_tolerance: r_tol,
        wall_time_s: t0.elapsed().as_secs_f64(),
        energy: final_energy,
        history,
        state,
    })
}

// ---------------------------------------------------------------------------
// Projected-gradient cross-check optimizer
// ---------------------------------------------------------------------------

/// Independent oracle: steepest descent on `Γ` with the BdG matrix as the
/// gradient, projected back to the admissible set by eigenvalue clipping of
/// `Γ` to `[0,1]` and a trace-restoring spectral shift along `N`. Intended
/// for small lattices.
pub fn gradient_projection_minimize(
    lambda: f64,
    lattice: &Arc<Lattice>,
    opts: &SCFOptions,
) -> Result<SCFResult> {
    let t0 = std::time::Instant::now();
    let m = lattice.dim;
    if lambda < 0.0 || lambda > m as f64 {
        return Err(Error::Range(format!("λ = {lambda} not representable")));
    }
    let e_tol = opts.resolved_energy_tolerance(lattice, lambda);
    let massless = opts.massless;
    if lambda == 0.0 {
        return hfb_minimize(lambda, lattice, opts);
    }
    let mut state = initial_state(lattice, lambda, opts)?;
    let mut e_curr = energy::energy(&state, massless, true)?.total;
    let mut history = Vec::new();
    let mut step = 1.0 / energy_scale(lattice).max(1.0);
    let mut converged = false;
    let mut sigma_warm = 0.0;
    let mut iterations = 0;
    let lattice_arc = lattice.clone();
    // project Γ - s·(F - σN): clip the spectrum to [0,1], bisecting the
    // shift σ (which preserves the block structure) until tr γ = λ
    let project = |big: &CMat, f: &CMat, s: f64, sigma0: f64| -> (QuasiFreeState, f64) {
        let two_m = 2 * m;
        let clip_at = |sigma: f64| -> (CMat, f64) {
            let shifted = CMat::from_fn(two_m, two_m, |i, j| {
                let nshift = if i == j {
                    C64::new(if i < m { sigma } else { -sigma }, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                };
                big[(i, j)] - C64::new(s, 0.0) * f[(i, j)] + C64::new(s, 0.0) * nshift
            });
            let e = eigh(&linalg::hermitian_part(&shifted));
            let clipped = linalg::spectral_function(&e, |x| x.clamp(0.0, 1.0));
            let tr: f64 = (0..m).map(|i| clipped[(i, i)].re).sum();
            (clipped, tr)
        };
        let (mut lo, mut hi) = (sigma0 - 1.0, sigma0 + 1.0);
        let mut r_lo = clip_at(lo);
        while r_lo.1 > lambda {
            lo -= (hi - lo).max(1.0);
            r_lo = clip_at(lo);
        }
        let mut r_hi = clip_at(hi);
        while r_hi.1 < lambda {
            hi += (hi - lo).max(1.0);
            r_hi = clip_at(hi);
        }
        let mut best = if (r_lo.1 - lambda).abs() < (r_hi.1 - lambda).abs() {
            (r_lo.0, r_lo.1, lo)
        } else {
            (r_hi.0, r_hi.1, hi)
        };
        for _ in 0..90 {
            if (best.1 - lambda).abs() <= 1e-11 * lambda.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (c, t) = clip_at(mid);
            if (t - lambda).abs() < (best.1 - lambda).abs() {
                best = (c, t, mid);
            }
            if t < lambda {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * (1.0 + sigma0.abs()) {
                break;
            }
        }
        let st = QuasiFreeState::from_big_gamma(lattice_arc.clone(), &best.0)
            .expect("projection preserves shape");
        (st, best.2)
    };
    let mut last_delta = f64::INFINITY;
    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let bdg = energy::bdg_operator(&state, 0.0, massless);
        let big = state.big_gamma();
        let residual = linalg::commutator_frob(&bdg.matrix, &big);
        history.push(IterationRecord {
            iteration: iter,
            energy: e_curr,
            residual,
            mu: sigma_warm,
            trace_gamma: state.trace_gamma(),
            alpha_norm: state.alpha_norm(),
        });
        if iter > 0 && last_delta.abs() <= e_tol {
            converged = true;
            break;
        }
        let mut improved = None;
        let mut s = step * 2.0;
        for _ in 0..24 {
            let (mut trial, sigma) = project(&big, &bdg.matrix, s, sigma_warm);
            trial.reproject();
            let e_trial = energy::energy(&trial, massless, true)?.total;
            if e_trial < e_curr - 1e-16 {
                improved = Some((trial, e_trial, sigma, s));
                break;
            }
            s *= 0.5;
        }
        match improved {
            Some((trial, e_trial, sigma, s_used)) => {
                last_delta = e_curr - e_trial;
                state = trial;
                e_curr = e_trial;
                sigma_warm = sigma;
                step = s_used;
            }
            None => {
                converged = last_delta.abs() <= e_tol * 10.0;
                break;
            }
        }
    }
    state.reproject();
    let final_energy = energy::energy(&state, massless, true)?;
    let final_residual = stationarity_residual(&state, sigma_warm, massless);
    Ok(SCFResult {
        mu: sigma_warm,
        stationarity_residual: final_residual,
        converged,
        iterations,
        orbital_energies: None,
        beta_reference: None,
        mu_negative: sigma_warm < 0.0,
        mu_below_beta_minus_m: None,
        delocalized: false,
        energy_tolerance: e_tol,
        residual_tolerance: opts.residual_tolerance,
        wall_time_s: t0.elapsed().as_secs_f64(),
        energy: final_energy,
        history,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;

    fn lat(l: f64, n: usize, m: f64, q: usize, kappa: f64) -> Arc<Lattice> {
        Arc::new(
            Lattice::build(LatticeConfig {
                box_length: l,
                points_per_dim: n,
                mass: m,
                spin: q,
                coupling: kappa,
            })
            .unwrap(),
        )
    }

    #[test]
    fn lambda_zero_returns_vacuum() {
        let lattice = lat(10.0, 4, 1.0, 1, 2.0);
        let r = hfb_minimize(0.0, &lattice, &SCFOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.energy.total, 0.0);
        assert_eq!(r.state.trace_gamma(), 0.0);
    }

    #[test]
    fn free_fermions_fill_constant_mode() {
        // κ = 0, λ = 1, q = 1: γ = projector on the constant mode, E = 0
        let lattice = lat(10.0, 4, 1.0, 1, 0.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = hfb_minimize(1.0, &lattice, &opts).unwrap();
        assert!(r.converged, "not converged: {:?}", r.history.last());
        assert!(r.energy.total.abs() < 1e-9, "E = {}", r.energy.total);
        assert!((r.state.trace_gamma() - 1.0).abs() < 1e-8);
        assert!(r.mu <= 1e-9, "μ = {}", r.mu);
        // occupies the k = 0 mode: uniform density
        let d = r.state.density();
        let mean = d.rho.iter().sum::<f64>() / d.rho.len() as f64;
        for &v in &d.rho {
            assert!((v - mean).abs() < 1e-7 * mean.max(1e-30));
        }
    }

    #[test]
    fn stationarity_residual_zero_for_vacuum() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let st = QuasiFreeState::zero(lattice.clone());
        let r = stationarity_residual(&st, -0.5, false);
        assert!(r < 1e-12);
        // random admissible state has positive residual (smoke)
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let st = crate::state::random_admissible(lattice, &mut rng, 2.0, 0.4, false);
        assert!(stationarity_residual(&st, -0.5, false) > 0.0);
    }

    #[test]
    fn hf_free_fermions_exact_filling() {
        // κ = 0, N = 3: fill the 3 lowest plane waves, E = Σ of 3 smallest t(k)
        let lattice = lat(10.0, 4, 1.0, 1, 0.0);
        let opts = SCFOptions {
            init: InitKind::PlaneWave,
            ..Default::default()
        };
        let r = hf_minimize(3, &lattice, &opts).unwrap();
        let mut t = lattice.t_massive.clone();
        t.sort_by(f64::total_cmp);
        let expect: f64 = t.iter().take(3).sum();
        assert!(
            (r.energy.total - expect).abs() < 1e-9 * expect.max(1.0),
            "E = {} vs {}",
            r.energy.total,
            expect
        );
        assert!(r.converged);
    }

    #[test]
    fn hf_single_particle_delocalizes_to_zero_energy() {
        // I^HF(1): direct and exchange cancel for rank one; minimum is the
        // constant mode with E = 0 and flat density
        let lattice = lat(10.0, 4, 1.0, 1, 2.0);
        let r = hf_minimize(1, &lattice, &SCFOptions::default()).unwrap();
        assert!(r.energy.total.abs() < 1e-8, "E = {}", r.energy.total);
        assert!(r.delocalized, "single-particle HF minimizer must delocalize");
    }

    #[test]
    fn interacting_minimizer_binds() {
        // κ = 2, λ = 2, q = 1 on a small N = 4 lattice: E < 0, μ < 0
        let lattice = lat(12.0, 4, 1.0, 1, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = hfb_minimize(2.0, &lattice, &opts).unwrap();
        assert!(r.converged, "history tail: {:?}", r.history.last());
        assert!(r.energy.total < 0.0, "E = {}", r.energy.total);
        assert!(r.mu < 0.0, "μ = {}", r.mu);
        assert!((r.state.trace_gamma() - 2.0).abs() < 1e-8);
        let rep = r.state.check_admissible(1e-8);
        assert!(rep.admissible, "{rep:?}");
    }

    #[test]
    fn gradient_projection_agrees_with_scf_convex_case() {
        // κ = 0: convex case, both optimizers find the same energy
        let lattice = lat(10.0, 2, 1.0, 1, 0.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let a = hfb_minimize(1.0, &lattice, &opts).unwrap();
        let b = gradient_projection_minimize(1.0, &lattice, &opts).unwrap();
        assert!(
            (a.energy.total - b.energy.total).abs() < 1e-8,
            "{} vs {}",
            a.energy.total,
            b.energy.total
        );
        let z = gradient_projection_minimize(0.0, &lattice, &opts).unwrap();
        assert_eq!(z.energy.total, 0.0);
    }

    #[test]
    fn interacting_gradient_projection_cross_check() {
        let lattice = lat(12.0, 4, 1.0, 1, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let a = hfb_minimize(1.0, &lattice, &opts).unwrap();
        let b = gradient_projection_minimize(1.0, &lattice, &opts).unwrap();
        let rel = (a.energy.total - b.energy.total).abs() / a.energy.total.abs().max(1e-12);
        assert!(
            rel < 1e-4,
            "optimizers disagree: {} vs {} (rel {rel:.2e})",
            a.energy.total,
            b.energy.total
        );
    }

    #[test]
    fn energy_history_is_monotone() {
        let lattice = lat(12.0, 4, 1.0, 1, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = hfb_minimize(2.0, &lattice, &opts).unwrap();
        for w in r.history.windows(2) {
            assert!(
                w[1].energy <= w[0].energy + r.energy_tolerance,
                "energy increased: {} -> {}",
                w[0].energy,
                w[1].energy
            );
        }
    }

    #[test]
    fn q2_minimizer_has_spin_structure() {
        let lattice = lat(12.0, 2, 1.0, 2, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = hfb_minimize(2.0, &lattice, &opts).unwrap();
        assert!(r.converged);
        let red = crate::energy::spin_reduction(&r.state).unwrap();
        assert!(
            red.spin_proportionality_defect < 1e-5,
            "spin defect {}",
            red.spin_proportionality_defect
        );
    }
}
