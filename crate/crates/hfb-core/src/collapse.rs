//! Chandrasekhar-limit machinery.
//!
//! On a finite lattice the massless functional cannot be literally unbounded
//! below; the collapse dichotomy survives as the sign of its constrained
//! minimum (the massless functional is exactly degree -1 homogeneous under
//! box dilation, so a strictly negative minimum is the lattice print of
//! `I_{0,κ}(λ) = -∞` and a vanishing one of `I_{0,κ}(λ) = 0`). The critical
//! particle number `λ̂(κ)` is located by bisection on that sign.

use crate::energy;
use crate::error::Error;
use crate::lattice::Lattice;
use crate::linalg::{self, linear_fit, RMat};
use crate::scf::{self, energy_scale, InitKind, SCFOptions, SCFResult};
use crate::state::QuasiFreeState;
use crate::Result;
use std::sync::Arc;

/// Energies of one state re-evaluated on dilated boxes `L → δL`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DilationCurve {
    pub deltas: Vec<f64>,
    pub massive: Vec<f64>,
    pub massless: Vec<f64>,
    /// Least-squares coefficients of `a/δ² + b/δ` on the massive curve.
    pub fit_a_over_d2: f64,
    pub fit_b_over_d: f64,
    pub fit_rms_residual: f64,
}

/// Evaluate the same `(γ, α)` matrices on rescaled lattices. Multipliers and
/// the kernel rescale; the matrices are unchanged, so the massless values
/// obey `Ẽ(δ) = Ẽ(1)/δ` exactly.
pub fn dilation_curve(state: &QuasiFreeState, deltas: &[f64]) -> Result<DilationCurve> {
    let mut massive = Vec::with_capacity(deltas.len());
    let mut massless = Vec::with_capacity(deltas.len());
    for &d in deltas {
        if !(d > 0.0) {
            return Err(Error::Range(format!("dilation δ must be > 0, got {d}")));
        }
        let scaled = Arc::new(state.lattice.scaled(d)?);
        let st = QuasiFreeState {
            lattice: scaled,
            gamma: state.gamma.clone(),
            alpha: state.alpha.clone(),
        };
        let e = energy::energy(&st, false, true)?;
        massive.push(e.total);
        massless.push(e.massless_total);
    }
    // fit massive ≈ a/δ² + b/δ by normal equations
    let (mut s22, mut s21, mut s11, mut y2, mut y1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (d, e) in deltas.iter().zip(massive.iter()) {
        let x2 = 1.0 / (d * d);
        let x1 = 1.0 / d;
        s22 += x2 * x2;
        s21 += x2 * x1;
        s11 += x1 * x1;
        y2 += x2 * e;
        y1 += x1 * e;
    }
    let det = s22 * s11 - s21 * s21;
    let (a, b) = if det.abs() > 1e-300 {
        ((y2 * s11 - y1 * s21) / det, (s22 * y1 - s21 * y2) / det)
    } else {
        (0.0, 0.0)
    };
    let rms = (deltas
        .iter()
        .zip(massive.iter())
        .map(|(d, e)| {
            let r = e - a / (d * d) - b / d;
            r * r
        })
        .sum::<f64>()
        / deltas.len() as f64)
        .sqrt();
    Ok(DilationCurve {
        deltas: deltas.to_vec(),
        massive,
        massless,
        fit_a_over_d2: a,
        fit_b_over_d: b,
        fit_rms_residual: rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MasslessClass {
    Subcritical,
    Supercritical,
}

impl std::fmt::Display for MasslessClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MasslessClass::Subcritical => write!(f, "subcritical"),
            MasslessClass::Supercritical => write!(f, "supercritical"),
        }
    }
}

#[derive(Debug)]
pub struct Classification {
    pub class: MasslessClass,
    /// Minimized massless energy.
    pub energy: f64,
    /// Negativity threshold used for the sign decision.
    pub threshold: f64,
    pub witness: SCFResult,
}

/// Minimize the massless functional at fixed `λ` and classify by sign.
/// Two localization widths are tried and the lower minimum kept, since the
/// supercritical channel is a concentrated state a delocalized start can
/// miss.
pub fn classify_masslessness(
    lambda: f64,
    lattice: &Arc<Lattice>,
    opts: &SCFOptions,
) -> Result<Classification> {
    let mut best: Option<SCFResult> = None;
    let widths = [
        lattice.config.box_length / 8.0,
        2.5 * lattice.spacing,
    ];
    for (i, &w) in widths.iter().enumerate() {
        let mut o = opts.clone();
        o.massless = true;
        o.beta_reference = false;
        o.init = InitKind::LocalizedGaussian { width: Some(w) };
        let r = scf::hfb_minimize(lambda, lattice, &o)?;
        let better = best
            .as_ref()
            .map(|b| r.energy.total < b.energy.total)
            .unwrap_or(true);
        if better {
            best = Some(r);
        }
        // a clearly negative first minimum needs no second start
        if i == 0 {
            if let Some(b) = &best {
                let thr = classify_threshold(lattice, lambda, opts);
                if b.energy.total < -8.0 * thr {
                    break;
                }
            }
        }
    }
    let witness = best.expect("at least one start ran");
    let threshold = classify_threshold(lattice, lambda, opts);
    let class = if witness.energy.total < -threshold {
        MasslessClass::Supercritical
    } else {
        MasslessClass::Subcritical
    };
    Ok(Classification {
        class,
        energy: witness.energy.total,
        threshold,
        witness,
    })
}

fn classify_threshold(lattice: &Lattice, lambda: f64, opts: &SCFOptions) -> f64 {
    let ir = 2.0 * std::f64::consts::PI / lattice.config.box_length;
    let e_tol = opts
        .energy_tolerance
        .unwrap_or(1e-9 * energy_scale(lattice) * lambda.max(1.0));
    (1e-7 * ir * lambda.max(1.0)).max(10.0 * e_tol)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub energy: f64,
    pub class: MasslessClass,
    pub converged: bool,
    pub iterations: usize,
}

/// Critical-λ scan output. `lambda_hat = None` flags same-class bracket
/// endpoints (both endpoint witnesses are in `points`).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScanResult {
    pub kappa: f64,
    pub spin: usize,
    pub points: Vec<ScanPoint>,
    pub lambda_hat: Option<f64>,
    pub bracket: (f64, f64),
    pub resolution: f64,
}

fn scan_point(c: &Classification, lambda: f64) -> ScanPoint {
    ScanPoint {
        lambda,
        energy: c.energy,
        class: c.class,
        converged: c.witness.converged,
        iterations: c.witness.iterations,
    }
}

/// Bisect `λ` between a subcritical and a supercritical endpoint down to the
/// requested resolution, warm-starting each classification from the previous
/// witness.
pub fn critical_lambda(
    lattice: &Arc<Lattice>,
    bracket: (f64, f64),
    resolution: f64,
    opts: &SCFOptions,
) -> Result<ScanResult> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Range(format!("bad λ bracket [{lo}, {hi}]")));
    }
    let c_lo = classify_masslessness(lo, lattice, opts)?;
    let c_hi = classify_masslessness(hi, lattice, opts)?;
    let mut points = vec![scan_point(&c_lo, lo), scan_point(&c_hi, hi)];
    if c_lo.class == c_hi.class {
        return Ok(ScanResult {
            kappa: lattice.config.coupling,
            spin: lattice.spin(),
            points,
            lambda_hat: None,
            bracket,
            resolution,
        });
    }
    if c_lo.class == MasslessClass::Supercritical {
        return Err(Error::Range(
            "λ bracket inverted: low endpoint supercritical".into(),
        ));
    }
    let mut warm = c_hi.witness.state.clone();
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        let mut o = opts.clone();
        o.init = InitKind::Provided(warm.clone());
        let c = classify_masslessness(mid, lattice, &o)?;
        points.push(scan_point(&c, mid));
        warm = c.witness.state.clone();
        match c.class {
            MasslessClass::Subcritical => lo = mid,
            MasslessClass::Supercritical => hi = mid,
        }
    }
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(ScanResult {
        kappa: lattice.config.coupling,
        spin: lattice.spin(),
        points,
        lambda_hat: Some(0.5 * (lo + hi)),
        bracket: (lo, hi),
        resolution,
    })
}

/// Least-squares slope of `log λ̂` against `log κ` (collapse-scaling
/// exponent; the continuum value is -3/2).
pub fn scaling_exponent(kappas: &[f64], lambda_hats: &[f64]) -> (f64, f64) {
    let xs: Vec<f64> = kappas.iter().map(|k| k.ln()).collect();
    let ys: Vec<f64> = lambda_hats.iter().map(|l| l.ln()).collect();
    let (_, slope, rms) = linear_fit(&xs, &ys);
    (slope, rms)
}

// ---------------------------------------------------------------------------
// Reduced functional (no exchange, no pairing) for the sandwich bounds
// ---------------------------------------------------------------------------

/// Minimize `tr(√(-Δ)γ) - (κ'/2) D(ρ,ρ)` over `0 ≤ γ ≤ 1`, `tr γ = λ` at an
/// overridden coupling. Site-level occupancies run up to the spin
/// multiplicity `q`. Used for the collapse-threshold sandwich
/// `λ̂_red(κ/(1-κπ/4)) ≤ λ̂(κ) ≤ λ̂_red(κ/(1+κπ/4))`.
pub fn reduced_massless_minimize(
    lambda: f64,
    kappa_eff: f64,
    lattice: &Arc<Lattice>,
    opts: &SCFOptions,
) -> Result<(f64, RMat)> {
    let ns = lattice.n_sites;
    let q = lattice.spin() as f64;
    if lambda < 0.0 || lambda > q * ns as f64 {
        return Err(Error::Range(format!("λ = {lambda} not representable")));
    }
    let k0 = lattice.multiplier_matrix_site(&lattice.t_massless);
    let energy_of = |tau: &RMat| -> f64 {
        let mut kin = 0.0;
        let mut d = 0.0;
        for y in 0..ns {
            for x in 0..ns {
                kin += k0[(x, y)] * tau[(y, x)];
                d += lattice.w_kernel[lattice.diff_index(x, y)] * tau[(x, x)] * tau[(y, y)];
            }
        }
        kin - 0.5 * kappa_eff * d
    };
    // Gaussian-localized start
    let center = lattice.site_position(lattice.center_site());
    let width = lattice.config.box_length / 8.0;
    let occ0: Vec<f64> = (0..ns)
        .map(|s| {
            let r = lattice.torus_distance(lattice.site_position(s), center);
            (-(r / width).powi(2)).exp()
        })
        .collect();
    let norm: f64 = occ0.iter().sum();
    let mut tau = RMat::zeros(ns, ns);
    for s in 0..ns {
        tau[(s, s)] = (occ0[s] / norm * lambda).min(q);
    }
    // renormalize after capping
    let tot: f64 = (0..ns).map(|s| tau[(s, s)]).sum();
    if (tot - lambda).abs() > 1e-12 {
        let mut scale = lambda / tot;
        for _ in 0..50 {
            for s in 0..ns {
                tau[(s, s)] = (tau[(s, s)] * scale).min(q);
            }
            let t: f64 = (0..ns).map(|s| tau[(s, s)]).sum();
            if (t - lambda).abs() < 1e-12 * lambda.max(1.0) {
                break;
            }
            scale = 1.0 + (lambda - t) / t.max(1e-300);
        }
    }
    let mut e_curr = energy_of(&tau);
    let e_tol = opts.resolved_energy_tolerance(lattice, lambda);
    let mut last_delta = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        if last_delta.abs() <= e_tol {
            break;
        }
        // mean field h = K₀ - κ'·diag(W∗n), Aufbau fill with cap q
        let n_occ: Vec<f64> = (0..ns).map(|s| tau[(s, s)]).collect();
        let mut h = k0.clone();
        for x in 0..ns {
            let mut v = 0.0;
            for y in 0..ns {
                v += lattice.w_kernel[lattice.diff_index(x, y)] * n_occ[y];
            }
            h[(x, x)] -= kappa_eff * v;
        }
        let (vals, vecs) = linalg::eigh_real(&h);
        let _ = vals;
        let mut remaining = lambda;
        let mut tau_new = RMat::zeros(ns, ns);
        for i in 0..ns {
            if remaining <= 0.0 {
                break;
            }
            let fill = remaining.min(q);
            for c in 0..ns {
                for r in 0..ns {
                    tau_new[(r, c)] += fill * vecs[(r, i)] * vecs[(c, i)];
                }
            }
            remaining -= fill;
        }
        let mut t = opts.damping;
        let mut accepted = None;
        for _ in 0..14 {
            let trial = RMat::from_fn(ns, ns, |r, c| {
                tau[(r, c)] * (1.0 - t) + tau_new[(r, c)] * t
            });
            let e_trial = energy_of(&trial);
            if e_trial <= e_curr + 1e-15 {
                accepted = Some((trial, e_trial));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((next, e_next)) => {
                last_delta = e_curr - e_next;
                tau = next;
                e_curr = e_next;
            }
            None => break,
        }
    }
    Ok((e_curr, tau))
}

/// Critical λ of the reduced functional at an effective coupling.
pub fn critical_lambda_reduced(
    kappa_eff: f64,
    lattice: &Arc<Lattice>,
    bracket: (f64, f64),
    resolution: f64,
    opts: &SCFOptions,
) -> Result<Option<f64>> {
    let ir = 2.0 * std::f64::consts::PI / lattice.config.box_length;
    let threshold = |lambda: f64| (1e-7 * ir * lambda.max(1.0)).max(10.0 * opts.resolved_energy_tolerance(lattice, lambda));
    let classify = |lambda: f64| -> Result<MasslessClass> {
        let (e, _) = reduced_massless_minimize(lambda, kappa_eff, lattice, opts)?;
        Ok(if e < -threshold(lambda) {
            MasslessClass::Supercritical
        } else {
            MasslessClass::Subcritical
        })
    };
    let (mut lo, mut hi) = bracket;
    let c_lo = classify(lo)?;
    let c_hi = classify(hi)?;
    if c_lo == c_hi {
        return Ok(None);
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        match classify(mid)? {
            MasslessClass::Subcritical => lo = mid,
            MasslessClass::Supercritical => hi = mid,
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

// ---------------------------------------------------------------------------
// Binding gap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct BindingGap {
    pub lambda: f64,
    pub lambda_prime: f64,
    /// `I(λ') + I(λ-λ') - I(λ)` with the shared background constants
    /// removed (comparable across particle numbers); positive means strict
    /// binding.
    pub gap: f64,
    /// Same combination on the raw lattice totals.
    pub gap_raw: f64,
    pub i_lambda: f64,
    pub i_prime: f64,
    pub i_complement: f64,
    pub all_converged: bool,
    pub energy_tolerance: f64,
}

/// Strict-binding gap `I(λ') + I(λ-λ') - I(λ)` from three SCF solves.
pub fn binding_gap(
    lambda: f64,
    lambda_prime: f64,
    lattice: &Arc<Lattice>,
    opts: &SCFOptions,
) -> Result<BindingGap> {
    if !(lambda_prime > 0.0 && lambda_prime < lambda) {
        return Err(Error::Range(format!(
            "need 0 < λ' < λ, got λ' = {lambda_prime}, λ = {lambda}"
        )));
    }
    let mut o = opts.clone();
    o.beta_reference = false;
    let r_full = scf::hfb_minimize(lambda, lattice, &o)?;
    let r_p = scf::hfb_minimize(lambda_prime, lattice, &o)?;
    let r_c = scf::hfb_minimize(lambda - lambda_prime, lattice, &o)?;
    let all_converged = r_full.converged && r_p.converged && r_c.converged;
    let gap = r_p.energy.comparable_total() + r_c.energy.comparable_total()
        - r_full.energy.comparable_total();
    let gap_raw = r_p.energy.total + r_c.energy.total - r_full.energy.total;
    let out = BindingGap {
        lambda,
        lambda_prime,
        gap,
        gap_raw,
        i_lambda: r_full.energy.total,
        i_prime: r_p.energy.total,
        i_complement: r_c.energy.total,
        all_converged,
        energy_tolerance: r_full.energy_tolerance,
    };
    if !all_converged {
        return Err(Error::NonConverged {
            iterations: r_full.iterations.max(r_p.iterations).max(r_c.iterations),
            delta_e: out.gap,
            residual: r_full
                .stationarity_residual
                .max(r_p.stationarity_residual)
                .max(r_c.stationarity_residual),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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
    fn massless_curve_is_exactly_homogeneous() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = crate::state::random_admissible(lattice, &mut rng, 2.0, 0.5, false);
        let deltas = [0.5, 1.0, 2.0, 5.0];
        let curve = dilation_curve(&st, &deltas).unwrap();
        let c = curve.massless[1]; // δ = 1
        for (d, e) in deltas.iter().zip(curve.massless.iter()) {
            assert!(
                (e * d - c).abs() <= 1e-10 * c.abs().max(1e-300),
                "Ẽ(δ)·δ = {} vs {}",
                e * d,
                c
            );
        }
    }

    #[test]
    fn massive_curve_fits_inverse_square_plus_inverse() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = crate::state::random_admissible(lattice, &mut rng, 2.0, 0.4, false);
        // large dilations: T ≈ -Δ/2m, E(δ) ≈ a/δ² + b/δ
        let deltas = [100.0, 140.0, 200.0, 280.0];
        let curve = dilation_curve(&st, &deltas).unwrap();
        let scale = curve.fit_a_over_d2.abs() + curve.fit_b_over_d.abs();
        assert!(
            curve.fit_rms_residual < 1e-8 * scale.max(1e-300),
            "residual {} vs scale {}",
            curve.fit_rms_residual,
            scale
        );
    }

    #[test]
    fn vacuum_dilation_curve_is_zero() {
        let lattice = lat(10.0, 2, 1.0, 1, 2.0);
        let st = QuasiFreeState::zero(lattice);
        let curve = dilation_curve(&st, &[0.5, 1.0, 2.0]).unwrap();
        assert!(curve.massive.iter().all(|&e| e == 0.0));
        assert!(curve.massless.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn kappa_zero_always_subcritical() {
        let lattice = lat(10.0, 2, 1.0, 1, 0.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        for &lambda in &[0.5, 2.0, 5.0] {
            let c = classify_masslessness(lambda, &lattice, &opts).unwrap();
            assert_eq!(c.class, MasslessClass::Subcritical, "λ = {lambda}: {c:?}");
        }
    }

    #[test]
    fn small_lambda_subcritical_large_supercritical() {
        let lattice = lat(12.0, 4, 1.0, 1, 2.0);
        let opts = SCFOptions {
            beta_reference: false,
            energy_tolerance: Some(1e-8),
            ..Default::default()
        };
        let lo = classify_masslessness(0.2, &lattice, &opts).unwrap();
        assert_eq!(lo.class, MasslessClass::Subcritical, "{:?}", lo.energy);
        let hi = classify_masslessness(30.0, &lattice, &opts).unwrap();
        assert_eq!(hi.class, MasslessClass::Supercritical, "{:?}", hi.energy);
    }

    #[test]
    fn scan_reports_same_class_bracket() {
        let lattice = lat(10.0, 2, 1.0, 1, 0.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let r = critical_lambda(&lattice, (0.5, 1.5), 0.25, &opts).unwrap();
        assert!(r.lambda_hat.is_none());
        assert_eq!(r.points.len(), 2);
    }

    #[test]
    fn binding_gap_zero_at_kappa_zero_and_symmetric() {
        let lattice = lat(10.0, 2, 1.0, 1, 0.0);
        let opts = SCFOptions {
            beta_reference: false,
            ..Default::default()
        };
        let g = binding_gap(2.0, 1.0, &lattice, &opts).unwrap();
        assert!(g.gap.abs() < 1e-10, "gap = {}", g.gap);
        assert!(g.all_converged);
        // symmetry in λ' ↔ λ - λ'
        let a = binding_gap(2.0, 0.5, &lattice, &opts).unwrap();
        let b = binding_gap(2.0, 1.5, &lattice, &opts).unwrap();
        assert!((a.gap - b.gap).abs() < 1e-12);
    }

    #[test]
    fn reduced_minimizer_negative_when_supercritical() {
        let lattice = lat(12.0, 4, 1.0, 1, 2.0);
        let opts = SCFOptions {
            energy_tolerance: Some(1e-8),
            ..Default::default()
        };
        let (e_small, _) = reduced_massless_minimize(0.2, 2.0, &lattice, &opts).unwrap();
        assert!(e_small >= -1e-6, "small λ: {e_small}");
        let (e_large, _) = reduced_massless_minimize(40.0, 2.0, &lattice, &opts).unwrap();
        assert!(e_large < -1e-3, "large λ: {e_large}");
    }

    #[test]
    fn scaling_exponent_recovers_power_law() {
        let kappas = [1.0, 1.5, 2.0];
        let hats: Vec<f64> = kappas.iter().map(|k| 7.0 * f64::powf(*k, -1.5)).collect();
        let (slope, rms) = scaling_exponent(&kappas, &hats);
        assert!((slope + 1.5).abs() < 1e-12);
        assert!(rms < 1e-12);
    }
}
