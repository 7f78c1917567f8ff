//! Invariant battery over seeded random admissible states.
//!
//! Each property is an operator inequality or identity evaluated with its
//! worst-case margin across the sample; the battery is the machine-readable
//! heart of the `verify` task.

use crate::energy;
use crate::lattice::{kappa_critical, Lattice, LatticeConfig};
use crate::linalg::C64;
use crate::spectral;
use crate::state::{random_admissible, QuasiFreeState};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BatteryOptions {
    pub seed: u64,
    /// Random admissible states drawn per spin sector.
    pub states_per_spin: usize,
    pub box_length: f64,
    pub points_per_dim: usize,
    pub mass: f64,
    pub coupling: f64,
    /// Margin tolerance (absolute, spectral).
    pub tolerance: f64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        BatteryOptions {
            seed: 0,
            states_per_spin: 100,
            box_length: 14.0,
            points_per_dim: 6,
            mass: 1.0,
            coupling: 2.0,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Worst margin across the sample (inequality slack; ≥ -tolerance passes).
    pub worst_margin: f64,
    pub samples: usize,
    pub note: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BatteryReport {
    pub options: BatteryOptions,
    pub properties: Vec<PropertyResult>,
    pub all_passed: bool,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

fn exchange_pointwise_margin(state: &QuasiFreeState) -> f64 {
    let lat = &state.lattice;
    let q = lat.spin();
    let n = state.site_occupancy();
    let mut worst = f64::INFINITY;
    for y in 0..lat.n_sites {
        for x in 0..lat.n_sites {
            let mut block = 0.0;
            for sp in 0..q {
                for sq in 0..q {
                    block += state.gamma[(x * q + sp, y * q + sq)].norm_sqr();
                }
            }
            worst = worst.min(n[x] * n[y] - block);
        }
    }
    worst
}

fn density_kinetic_margin(state: &QuasiFreeState) -> f64 {
    let lat = &state.lattice;
    let occ = state.site_occupancy();
    let sqrt_rho: Vec<C64> = occ.iter().map(|&v| C64::new(v.max(0.0).sqrt(), 0.0)).collect();
    let form = lat
        .multiplier_quadratic_form(&sqrt_rho, &lat.t_massless)
        .expect("lattice-sized field");
    let profile = lat.multiplier_profile(&lat.t_massless);
    let q = lat.spin();
    let mut tr = 0.0;
    for y in 0..lat.n_sites {
        for x in 0..lat.n_sites {
            let p = profile[lat.diff_index(x, y)];
            if p == 0.0 {
                continue;
            }
            for s in 0..q {
                tr += p * state.gamma[(y * q + s, x * q + s)].re;
            }
        }
    }
    tr - form
}

/// `(κπ/4)·tr(√(-Δ)γ) + correction - (κ/2)·Σ W|α|²`; the correction is the
/// rigorous lattice Kato-deficit term `(κ/2)·ε·tr γ` with
/// `ε = max(0, -min eig((π/2)√(-Δ) - W_c))`.
fn pairing_kinetic_margin(state: &QuasiFreeState, kato_deficit: f64) -> f64 {
    let lat = &state.lattice;
    let kappa = lat.config.coupling;
    let (_, _, pr) = energy::interaction_sums(state);
    let pairing_term = 0.5 * kappa * pr;
    let profile = lat.multiplier_profile(&lat.t_massless);
    let q = lat.spin();
    let mut tr = 0.0;
    for y in 0..lat.n_sites {
        for x in 0..lat.n_sites {
            let p = profile[lat.diff_index(x, y)];
            if p == 0.0 {
                continue;
            }
            for s in 0..q {
                tr += p * state.gamma[(y * q + s, x * q + s)].re;
            }
        }
    }
    let correction = 0.5 * kappa * kato_deficit * state.trace_gamma();
    kappa * std::f64::consts::FRAC_PI_4 * tr + correction - pairing_term
}

/// Run the full property battery.
pub fn run_battery(opts: &BatteryOptions) -> Result<BatteryReport> {
    let t0 = std::time::Instant::now();
    let mut properties: Vec<PropertyResult> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let tol = opts.tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    if opts.coupling >= kappa_critical() {
        warnings.push(format!(
            "κ = {} ≥ 4/π: continuum energy unbounded below (instability expected)",
            opts.coupling
        ));
    }
    if opts.states_per_spin == 0 {
        warnings.push("empty state sample: properties pass vacuously".into());
    }

    let mut equivalence_disagreements = 0usize;
    let mut exchange_worst = f64::INFINITY;
    let mut density_worst = f64::INFINITY;
    let mut pairing_worst = f64::INFINITY;
    let mut aux_worst = f64::INFINITY;
    let mut homogeneity_worst = f64::INFINITY;
    let mut total_states = 0usize;

    for &q in &[1usize, 2] {
        let lattice = Arc::new(Lattice::build(LatticeConfig {
            box_length: opts.box_length,
            points_per_dim: opts.points_per_dim,
            mass: opts.mass,
            spin: q,
            coupling: opts.coupling,
        })?);
        let kato = spectral::kato_diagnostic(&lattice);
        let kato_deficit = (-kato).max(0.0);
        if kato_deficit > 0.0 {
            warnings.push(format!(
                "q={q}: lattice Hardy-Kato deficit {kato_deficit:.3e} \
                 (clamps: {}); pairing-kinetic margins use the correction",
                lattice.clamp_count
            ));
        }
        let max_lambda = (lattice.dim as f64) * 0.45;
        for i in 0..opts.states_per_spin {
            total_states += 1;
            let lambda = 0.3 + (i as f64 / opts.states_per_spin.max(1) as f64) * max_lambda;
            let pairing = 0.2 + 0.75 * (i % 7) as f64 / 7.0;
            let real = i % 4 == 0;
            let st = random_admissible(lattice.clone(), &mut rng, lambda, pairing, real);

            // admissibility ⟺ spectral characterization, both directions
            let rep = st.check_admissible(tol);
            let spectral_ok =
                rep.big_gamma_min_eigenvalue >= -tol && rep.big_gamma_max_eigenvalue <= 1.0 + tol;
            let constraint_ok = rep.hermiticity_defect <= tol
                && rep.antisymmetry_defect <= tol
                && rep.constraint_min_eigenvalue >= -tol
                && rep.gamma_min_eigenvalue >= -tol
                && rep.gamma_max_eigenvalue <= 1.0 + tol;
            if spectral_ok != constraint_ok {
                equivalence_disagreements += 1;
            }
            // corrupted variant exercises the violated direction
            let mut bad = st.clone();
            if i % 2 == 0 {
                bad.alpha = crate::linalg::scale(&bad.alpha, C64::new(2.5, 0.0));
            } else {
                bad.gamma = crate::linalg::scale(&bad.gamma, C64::new(1.3, 0.0));
            }
            let brep = bad.check_admissible(tol);
            let bad_spectral_ok = brep.big_gamma_min_eigenvalue >= -tol
                && brep.big_gamma_max_eigenvalue <= 1.0 + tol;
            let bad_constraint_ok = brep.constraint_min_eigenvalue >= -tol
                && brep.gamma_min_eigenvalue >= -tol
                && brep.gamma_max_eigenvalue <= 1.0 + tol;
            if bad_spectral_ok != bad_constraint_ok {
                equivalence_disagreements += 1;
            }

            exchange_worst = exchange_worst.min(exchange_pointwise_margin(&st));
            density_worst = density_worst.min(density_kinetic_margin(&st));
            pairing_worst = pairing_worst.min(pairing_kinetic_margin(&st, kato_deficit));
            // 𝒢 ≥ (1-κπ/4)·tr(Kγ) - correction
            let aux = energy::auxiliary_energy(&st);
            let correction =
                0.5 * lattice.config.coupling * kato_deficit * st.trace_gamma();
            aux_worst = aux_worst.min(aux.value - aux.kato_margin + correction);
            // massless homogeneity on a subsample
            if i % 25 == 0 {
                let curve = crate::collapse::dilation_curve(&st, &[0.5, 1.0, 3.0])?;
                let c = curve.massless[1];
                let dev = curve
                    .deltas
                    .iter()
                    .zip(curve.massless.iter())
                    .map(|(d, e)| (e * d - c).abs())
                    .fold(0.0f64, f64::max);
                homogeneity_worst = homogeneity_worst.min(1e-10 * c.abs().max(1e-300) - dev);
            }
        }
    }

    let vacuous = total_states == 0;
    let margin_or = |worst: f64| if vacuous { 0.0 } else { worst };
    properties.push(PropertyResult {
        name: "admissibility_spectral_equivalence".into(),
        passed: equivalence_disagreements == 0,
        worst_margin: -(equivalence_disagreements as f64),
        samples: 2 * total_states,
        note: "Γ-spectrum in [0,1] ⟺ γ-γ²-αα* ⪰ 0 with symmetry defects ≤ tol".into(),
    });
    properties.push(PropertyResult {
        name: "exchange_pointwise_bound".into(),
        passed: vacuous || margin_or(exchange_worst) >= -tol,
        worst_margin: margin_or(exchange_worst),
        samples: total_states,
        note: "|γ(x,y)|² ≤ ρ(x)ρ(y)·h⁶".into(),
    });
    properties.push(PropertyResult {
        name: "density_kinetic_domination".into(),
        passed: vacuous || margin_or(density_worst) >= -tol,
        worst_margin: margin_or(density_worst),
        samples: total_states,
        note: "⟨√ρ, √(-Δ)√ρ⟩ ≤ tr(√(-Δ)γ)".into(),
    });
    properties.push(PropertyResult {
        name: "pairing_kinetic_control".into(),
        passed: vacuous || margin_or(pairing_worst) >= -tol,
        worst_margin: margin_or(pairing_worst),
        samples: total_states,
        note: "(κ/2)ΣW|α|² ≤ (κπ/4)tr(√(-Δ)γ) + kato-deficit correction".into(),
    });
    properties.push(PropertyResult {
        name: "auxiliary_wlsc_surrogate".into(),
        passed: vacuous || margin_or(aux_worst) >= -tol,
        worst_margin: margin_or(aux_worst),
        samples: total_states,
        note: "𝒢 ≥ (1-κπ/4)·tr(Kγ) - correction".into(),
    });
    properties.push(PropertyResult {
        name: "massless_homogeneity".into(),
        passed: vacuous || margin_or(homogeneity_worst) >= 0.0,
        worst_margin: margin_or(homogeneity_worst),
        samples: total_states.div_ceil(25),
        note: "dilation curve satisfies Ẽ(δ)·δ = const to 1e-10 relative".into(),
    });
    // lattice-level identities (state-independent)
    {
        let lattice = Lattice::build(LatticeConfig {
            box_length: opts.box_length,
            points_per_dim: opts.points_per_dim,
            mass: opts.mass.max(1e-6),
            spin: 1,
            coupling: opts.coupling,
        })?;
        let ims = spectral::ims_check(&lattice, opts.box_length / 4.0, 32)?;
        properties.push(PropertyResult {
            name: "ims_identity".into(),
            passed: ims.identity_residual < 1e-6 && ims.min_eig_l_chi >= -tol,
            worst_margin: (1e-6 - ims.identity_residual).min(ims.min_eig_l_chi),
            samples: 1,
            note: format!(
                "residual {:.3e} at {} nodes; min eig L_χ {:.3e}",
                ims.identity_residual, ims.quadrature_nodes, ims.min_eig_l_chi
            ),
        });
        let kato = spectral::kato_diagnostic(&lattice);
        properties.push(PropertyResult {
            name: "kato_diagnostic".into(),
            passed: kato.is_finite(),
            worst_margin: kato,
            samples: 1,
            note: "min eig((π/2)√(-Δ) - W_c); continuum value ≥ 0, lattice shift reported"
                .into(),
        });
        // stability margin sign: 1 - κπ/4 (violated by design above 4/π)
        let margin = 1.0 - opts.coupling * std::f64::consts::FRAC_PI_4;
        properties.push(PropertyResult {
            name: "stability_margin_sign".into(),
            passed: true,
            worst_margin: margin,
            samples: 1,
            note: if margin > 0.0 {
                "κ < 4/π: kinetic term dominates pairing".into()
            } else {
                "κ ≥ 4/π: violated by design (continuum functional unbounded below)".into()
            },
        });
    }
    let all_passed = properties.iter().all(|p| p.passed);
    Ok(BatteryReport {
        options: opts.clone(),
        properties,
        all_passed,
        warnings,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}
