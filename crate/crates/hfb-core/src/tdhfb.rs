//! Time-dependent HFB flow `i∂ₜΓ = [F_Γ, Γ]`.
//!
//! Steps are spectrum-preserving unitary conjugations
//! `Γ_{n+1} = e^{-i·dt·F̃} Γ_n e^{+i·dt·F̃}` with `F̃` the BdG matrix at a
//! midpoint predictor (one fixed-point correction → second order). Matrix
//! exponentials go through the eigendecomposition of the Hermitian `F̃`.
//! Hartree-Fock data (`α = 0`) stay on the invariant `α = 0` manifold and
//! evolve through the `M×M` mean-field block alone.

use crate::energy::{self, EnergyBreakdown};
use crate::error::Error;
use crate::lattice::Lattice;
use crate::linalg::{self, conjugate_by_exp, eigh, CMat};
use crate::scf::SCFResult;
use crate::state::QuasiFreeState;
use crate::Result;

#[derive(Debug, Clone)]
pub struct PropagateOptions {
    pub dt: f64,
    pub t_final: f64,
    /// Steps between Γ-spectrum recordings (0: endpoints only).
    pub spectrum_every: usize,
    /// Times at which to store full state snapshots.
    pub snapshot_times: Vec<f64>,
    /// Kinetic-growth factor that raises the blowup flag (0 disables).
    pub blowup_threshold: f64,
}

impl PropagateOptions {
    /// Defaults `dt = 0.01/m`, `T = 10/m` (with the infrared scale standing
    /// in for a vanishing mass).
    pub fn for_lattice(lattice: &Lattice) -> Self {
        let scale = crate::scf::energy_scale(lattice);
        PropagateOptions {
            dt: 0.01 / scale,
            t_final: 10.0 / scale,
            spectrum_every: 0,
            snapshot_times: Vec::new(),
            blowup_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepObservables {
    pub time: f64,
    pub energy: EnergyBreakdown,
    pub trace_gamma: f64,
    pub alpha_norm: f64,
    /// `tr(√(-Δ)γ)`: the blowup indicator.
    pub massless_kinetic: f64,
    pub centroid: [f64; 3],
    /// Γ-spectrum extremes at recorded steps.
    pub gamma_spectrum_min: Option<f64>,
    pub gamma_spectrum_max: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BlowupIndicator {
    /// `E(0) < -m·tr γ(0)` held at the initial datum.
    pub energy_condition: bool,
    pub flagged: bool,
    pub flag_time: Option<f64>,
    /// max over the run of `tr(√(-Δ)γ)(t) / tr(√(-Δ)γ)(0)`.
    pub kinetic_growth: f64,
    /// Time of the kinetic maximum: on the lattice blowup saturates at the
    /// grid cutoff rather than diverging.
    pub saturation_time: f64,
    /// Growth rate `d ln kin / dt` averaged up to the saturation time.
    pub growth_rate: f64,
    /// Mass inside balls around the centroid at the end of the run.
    pub ball_masses: Vec<(f64, f64)>,
}

pub struct Trajectory {
    pub observables: Vec<StepObservables>,
    pub snapshots: Vec<(f64, QuasiFreeState)>,
    pub final_state: QuasiFreeState,
    pub dt: f64,
    pub scheme_order: usize,
    /// Propagation aborted on a non-finite observable.
    pub aborted: bool,
    pub blowup: Option<BlowupIndicator>,
}

fn observables_of(state: &QuasiFreeState, t: f64, with_spectrum: bool) -> Result<StepObservables> {
    let e = energy::energy(state, false, true)?;
    let interactions = e.direct + e.exchange + e.pairing;
    let massless_kinetic = e.massless_total - interactions;
    let field = state.density();
    let (smin, smax) = if with_spectrum {
        if state.alpha_norm() < 1e-13 {
            // Γ-spectrum of an HF state is {γ_i} ∪ {1-γ_i}
            let ge = linalg::eigvalsh(&state.gamma);
            let lo = ge.first().copied().unwrap_or(0.0);
            let hi = ge.last().copied().unwrap_or(0.0);
            (Some(lo.min(1.0 - hi)), Some(hi.max(1.0 - lo)))
        } else {
            let be = linalg::eigvalsh(&state.big_gamma());
            (be.first().copied(), be.last().copied())
        }
    } else {
        (None, None)
    };
    Ok(StepObservables {
        time: t,
        trace_gamma: state.trace_gamma(),
        alpha_norm: state.alpha_norm(),
        massless_kinetic,
        centroid: field.centroid,
        gamma_spectrum_min: smin,
        gamma_spectrum_max: smax,
        energy: e,
    })
}

/// Propagate the HFB flow from `state0` to `t_final`.
pub fn propagate(state0: &QuasiFreeState, opts: &PropagateOptions) -> Result<Trajectory> {
    if opts.dt == 0.0 {
        return Err(Error::Range("dt must be nonzero".into()));
    }
    let steps = (opts.t_final / opts.dt.abs()).round() as usize;
    let dt = opts.dt;
    let lattice = state0.lattice.clone();
    let m = lattice.dim;
    let hf_path = state0.alpha_norm() < 1e-14;
    let mut state = state0.clone();
    let mut observables = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut pending_snapshots: Vec<f64> = opts.snapshot_times.clone();
    pending_snapshots.sort_by(f64::total_cmp);
    let record_spec = |step: usize| -> bool {
        step == 0 || step == steps || (opts.spectrum_every > 0 && step % opts.spectrum_every == 0)
    };
    let first = observables_of(&state, 0.0, record_spec(0))?;
    let kin0 = first.massless_kinetic.max(1e-300);
    let e0 = first.energy.total;
    let tr0 = first.trace_gamma;
    let energy_condition = e0 < -lattice.config.mass * tr0;
    observables.push(first);
    let mut aborted = false;
    let mut flagged = false;
    let mut flag_time = None;
    let mut kin_max = kin0;
    let mut kin_max_time = 0.0;

    for step in 0..steps {
        let t = step as f64 * dt;
        if hf_path {
            // predictor: half step under H(γ_n)
            let h0 = energy::mean_field(&state, false);
            let e0h = eigh(&h0);
            let gamma_mid = conjugate_by_exp(&e0h, 0.5 * dt, &state.gamma);
            let mid = QuasiFreeState {
                lattice: lattice.clone(),
                gamma: linalg::hermitian_part(&gamma_mid),
                alpha: CMat::zeros(m, m),
            };
            let h_mid = energy::mean_field(&mid, false);
            let eh = eigh(&h_mid);
            let gamma_next = conjugate_by_exp(&eh, dt, &state.gamma);
            state.gamma = linalg::hermitian_part(&gamma_next);
        } else {
            let f0 = energy::bdg_operator(&state, 0.0, false);
            let ef0 = eigh(&f0.matrix);
            let big = state.big_gamma();
            let big_mid = conjugate_by_exp(&ef0, 0.5 * dt, &big);
            let mid = QuasiFreeState::from_big_gamma(lattice.clone(), &big_mid)?;
            let f_mid = energy::bdg_operator(&mid, 0.0, false);
            let ef = eigh(&f_mid.matrix);
            let big_next = conjugate_by_exp(&ef, dt, &big);
            state = QuasiFreeState::from_big_gamma(lattice.clone(), &big_next)?;
        }
        let t_next = (step + 1) as f64 * dt;
        let obs = observables_of(&state, t_next, record_spec(step + 1))?;
        let finite = obs.energy.total.is_finite()
            && obs.trace_gamma.is_finite()
            && obs.massless_kinetic.is_finite();
        if obs.massless_kinetic > kin_max {
            kin_max = obs.massless_kinetic;
            kin_max_time = t_next;
        }
        if opts.blowup_threshold > 0.0
            && !flagged
            && obs.massless_kinetic >= opts.blowup_threshold * kin0
        {
            flagged = true;
            flag_time = Some(t_next);
        }
        observables.push(obs);
        while let Some(&ts) = pending_snapshots.first() {
            if ts <= t_next + 1e-12 && ts > t - 0.5 * dt.abs() {
                snapshots.push((t_next, state.clone()));
                pending_snapshots.remove(0);
            } else {
                break;
            }
        }
        if !finite {
            aborted = true;
            break;
        }
    }
    let blowup = if opts.blowup_threshold > 0.0 {
        let growth = kin_max / kin0;
        let rate = if kin_max_time > 0.0 {
            (kin_max / kin0).ln() / kin_max_time
        } else {
            0.0
        };
        let field = state.density();
        let h3 = lattice.spacing.powi(3);
        let radii = [
            2.0 * lattice.spacing,
            lattice.config.box_length / 8.0,
            lattice.config.box_length / 4.0,
        ];
        let ball_masses: Vec<(f64, f64)> = radii
            .iter()
            .map(|&r| {
                let mass: f64 = (0..lattice.n_sites)
                    .filter(|&s| {
                        lattice.torus_distance(lattice.site_position(s), field.centroid) < r
                    })
                    .map(|s| field.rho[s] * h3)
                    .sum();
                (r, mass)
            })
            .collect();
        Some(BlowupIndicator {
            energy_condition,
            flagged,
            flag_time,
            kinetic_growth: growth,
            saturation_time: kin_max_time,
            growth_rate: rate,
            ball_masses,
        })
    } else {
        None
    };
    Ok(Trajectory {
        observables,
        snapshots,
        final_state: state,
        dt,
        scheme_order: 2,
        aborted,
        blowup,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StationaryOrbitReport {
    /// `max_t ‖γ(t) - γ₀‖_F`
    pub max_gamma_deviation: f64,
    /// `max_t ‖α(t) - e^{-2iμt}α₀‖_F`
    pub max_alpha_deviation: f64,
    /// Per-recorded-step deviations `(t, dev_γ, dev_α)`.
    pub series: Vec<(f64, f64, f64)>,
    pub mu: f64,
}

/// Propagate a converged minimizer and measure its deviation from the exact
/// stationary orbit `γ(t) = γ₀`, `α(t) = e^{-2iμt}α₀`.
pub fn stationary_orbit_check(
    scf: &SCFResult,
    t_final: f64,
    dt: f64,
) -> Result<StationaryOrbitReport> {
    stationary_orbit_check_with_mu(scf, scf.mu, t_final, dt)
}

/// Same as [`stationary_orbit_check`] with an overridden phase rate; with a
/// wrong `μ` the α-deviation winds linearly at rate `2·Δμ·‖α₀‖`.
pub fn stationary_orbit_check_with_mu(
    scf: &SCFResult,
    mu: f64,
    t_final: f64,
    dt: f64,
) -> Result<StationaryOrbitReport> {
    let state0 = &scf.state;
    let lattice = state0.lattice.clone();
    let steps = (t_final / dt).round() as usize;
    let m = lattice.dim;
    let hf_path = state0.alpha_norm() < 1e-14;
    let mut state = state0.clone();
    let mut series = Vec::with_capacity(steps);
    let mut max_g: f64 = 0.0;
    let mut max_a: f64 = 0.0;
    for step in 0..steps {
        if hf_path {
            let h0 = energy::mean_field(&state, false);
            let e0h = eigh(&h0);
            let gamma_mid = conjugate_by_exp(&e0h, 0.5 * dt, &state.gamma);
            let mid = QuasiFreeState {
                lattice: lattice.clone(),
                gamma: linalg::hermitian_part(&gamma_mid),
                alpha: CMat::zeros(m, m),
            };
            let h_mid = energy::mean_field(&mid, false);
            let eh = eigh(&h_mid);
            state.gamma = linalg::hermitian_part(&conjugate_by_exp(&eh, dt, &state.gamma));
        } else {
            let f0 = energy::bdg_operator(&state, 0.0, false);
            let ef0 = eigh(&f0.matrix);
            let big = state.big_gamma();
            let big_mid = conjugate_by_exp(&ef0, 0.5 * dt, &big);
            let mid = QuasiFreeState::from_big_gamma(lattice.clone(), &big_mid)?;
            let f_mid = energy::bdg_operator(&mid, 0.0, false);
            let ef = eigh(&f_mid.matrix);
            state = QuasiFreeState::from_big_gamma(lattice.clone(), &conjugate_by_exp(&ef, dt, &big))?;
        }
        let t = (step + 1) as f64 * dt;
        let dg = linalg::frob(&linalg::sub(&state.gamma, &state0.gamma));
        let phase = crate::linalg::C64::from_polar(1.0, -2.0 * mu * t);
        let expected_alpha = linalg::scale(&state0.alpha, phase);
        let da = linalg::frob(&linalg::sub(&state.alpha, &expected_alpha));
        max_g = max_g.max(dg);
        max_a = max_a.max(da);
        series.push((t, dg, da));
    }
    Ok(StationaryOrbitReport {
        max_gamma_deviation: max_g,
        max_alpha_deviation: max_a,
        series,
        mu,
    })
}

/// Propagate with the blowup indicator armed. The energy condition
/// `E(state0) < -m·tr γ₀` is checked and recorded, not enforced.
pub fn blowup_monitor(
    state0: &QuasiFreeState,
    t_final: f64,
    dt: f64,
    threshold: f64,
) -> Result<Trajectory> {
    let opts = PropagateOptions {
        dt,
        t_final,
        spectrum_every: 0,
        snapshot_times: Vec::new(),
        blowup_threshold: if threshold > 0.0 { threshold } else { 1e3 },
    };
    propagate(state0, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;
    use crate::scf::{hfb_minimize, SCFOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

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
    fn free_flow_is_exact() {
        // κ = 0: F = T is time-independent, the stepper is the exact
        // exponential; energy drift at round-off over 100 steps
        let lattice = lat(10.0, 2, 1.0, 1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = crate::state::random_admissible(lattice.clone(), &mut rng, 2.0, 0.4, false);
        let opts = PropagateOptions {
            dt: 0.01,
            t_final: 1.0,
            spectrum_every: 0,
            snapshot_times: vec![],
            blowup_threshold: 0.0,
        };
        let traj = propagate(&st, &opts).unwrap();
        let e0 = traj.observables[0].energy.total;
        for o in &traj.observables {
            assert!(
                (o.energy.total - e0).abs() < 1e-12 * (1.0 + e0.abs()),
                "energy drift at t = {}",
                o.time
            );
        }
        // κ = 0 conserves the kinetic term exactly: never flags
        let traj = blowup_monitor(&st, 1.0, 0.01, 10.0).unwrap();
        assert!(!traj.blowup.as_ref().unwrap().flagged);
    }

    #[test]
    fn conservation_laws_interacting() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = crate::state::random_admissible(lattice, &mut rng, 2.0, 0.5, false);
        let opts = PropagateOptions {
            dt: 0.01,
            t_final: 2.0,
            spectrum_every: 50,
            snapshot_times: vec![],
            blowup_threshold: 0.0,
        };
        let traj = propagate(&st, &opts).unwrap();
        let first = &traj.observables[0];
        let last = traj.observables.last().unwrap();
        assert!(
            (last.trace_gamma - first.trace_gamma).abs() < 1e-10,
            "trace drift {}",
            (last.trace_gamma - first.trace_gamma).abs()
        );
        assert!(
            (last.energy.total - first.energy.total).abs()
                < 1e-8 * (1.0 + first.energy.total.abs()),
            "energy drift {} -> {}",
            first.energy.total,
            last.energy.total
        );
        // Γ-spectrum invariance at recorded steps
        let smin0 = first.gamma_spectrum_min.unwrap();
        let smax0 = first.gamma_spectrum_max.unwrap();
        for o in traj.observables.iter().filter(|o| o.gamma_spectrum_min.is_some()) {
            assert!((o.gamma_spectrum_min.unwrap() - smin0).abs() < 1e-8);
            assert!((o.gamma_spectrum_max.unwrap() - smax0).abs() < 1e-8);
        }
    }

    #[test]
    fn admissibility_holds_along_the_flow() {
        let lattice = lat(10.0, 2, 1.0, 2, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = crate::state::random_admissible(lattice, &mut rng, 3.0, 0.6, false);
        let opts = PropagateOptions {
            dt: 0.02,
            t_final: 0.6,
            spectrum_every: 10,
            snapshot_times: vec![0.3],
            blowup_threshold: 0.0,
        };
        let traj = propagate(&st, &opts).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        for (_, snap) in &traj.snapshots {
            let rep = snap.check_admissible(1e-9);
            assert!(rep.admissible, "{rep:?}");
        }
        let rep = traj.final_state.check_admissible(1e-9);
        assert!(rep.admissible, "{rep:?}");
    }

    #[test]
    fn time_reversal_returns_initial_state() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = crate::state::random_admissible(lattice, &mut rng, 2.0, 0.5, false);
        let fwd = PropagateOptions {
            dt: 0.01,
            t_final: 0.5,
            spectrum_every: 0,
            snapshot_times: vec![],
            blowup_threshold: 0.0,
        };
        let traj = propagate(&st, &fwd).unwrap();
        let bwd = PropagateOptions {
            dt: -0.01,
            ..fwd
        };
        let back = propagate(&traj.final_state, &bwd).unwrap();
        let dg = linalg::frob(&linalg::sub(&back.final_state.gamma, &st.gamma));
        let da = linalg::frob(&linalg::sub(&back.final_state.alpha, &st.alpha));
        assert!(dg < 1e-7 && da < 1e-7, "reversal defect γ {dg}, α {da}");
    }

    #[test]
    fn integrator_is_second_order() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let st = crate::state::random_admissible(lattice, &mut rng, 2.0, 0.5, false);
        let t_final = 0.4;
        let run = |dt: f64| {
            let o = PropagateOptions {
                dt,
                t_final,
                spectrum_every: 0,
                snapshot_times: vec![],
                blowup_threshold: 0.0,
            };
            propagate(&st, &o).unwrap().final_state
        };
        let reference = run(0.00125);
        let err = |dt: f64| {
            let s = run(dt);
            linalg::frob(&linalg::sub(&s.gamma, &reference.gamma))
                + linalg::frob(&linalg::sub(&s.alpha, &reference.alpha))
        };
        let e1 = err(0.02);
        let e2 = err(0.01);
        let slope = (e1 / e2).log2();
        assert!(
            (1.7..=2.3).contains(&slope),
            "order slope {slope} (errors {e1:.3e}, {e2:.3e})"
        );
    }

    #[test]
    fn stationary_orbit_of_hf_minimizer() {
        // α = 0 minimizer: [H_γ, γ] = 0 at convergence, γ(t) stays put
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = crate::scf::hf_minimize(2, &lattice, &opts).unwrap();
        assert!(r.converged);
        let rep = stationary_orbit_check(&r, 2.0, 0.01).unwrap();
        assert!(
            rep.max_gamma_deviation < 1e-6,
            "γ deviation {}",
            rep.max_gamma_deviation
        );
    }

    #[test]
    fn stationary_orbit_phase_law() {
        let lattice = lat(12.0, 2, 1.0, 1, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = hfb_minimize(2.0, &lattice, &opts).unwrap();
        assert!(r.converged);
        assert!(r.state.alpha_norm() > 1e-6, "needs a paired minimizer");
        let good = stationary_orbit_check(&r, 2.0, 0.01).unwrap();
        assert!(
            good.max_alpha_deviation < 1e-5,
            "α deviation {} (residual {})",
            good.max_alpha_deviation,
            r.stationarity_residual
        );
        // wrong phase winds linearly at rate 2·Δμ·‖α₀‖
        let dmu = 0.1;
        let bad = stationary_orbit_check_with_mu(&r, r.mu + dmu, 2.0, 0.01).unwrap();
        let alpha_norm = r.state.alpha_norm();
        // early-time slope of the deviation
        let probe = bad.series[19]; // t = 0.2
        let expected = 2.0 * dmu * probe.0 * alpha_norm;
        assert!(
            (probe.2 - expected).abs() < 0.15 * expected,
            "wind {} vs expected {expected}",
            probe.2
        );
    }
}
