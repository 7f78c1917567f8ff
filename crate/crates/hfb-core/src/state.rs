//! Admissible HFB states `(γ, α)` and their diagnostics.
//!
//! A state is admissible when `γ = γ*`, `αᵀ = -α` and the block matrix
//! `Γ = [[γ, α], [α*, 1-γ̄]]` satisfies `0 ≤ Γ ≤ 1`, which is equivalent to
//! `0 ≤ γ ≤ 1` together with `γ - γ² - αα* ⪰ 0`.

use crate::error::Error;
use crate::lattice::Lattice;
use crate::linalg::{
    self, antisymmetry_defect, eigh, eigvalsh, hermiticity_defect, C64, CMat,
};
use crate::Result;
use rand::Rng;
use std::sync::Arc;

/// The variational variable: a pair of `M×M` matrices in the orthonormal
/// site-spin basis, `M = q·N³`. Index convention: `idx = site·q + spin`.
#[derive(Clone)]
pub struct QuasiFreeState {
    pub lattice: Arc<Lattice>,
    /// One-body density matrix, Hermitian with spectrum in `[0,1]`.
    pub gamma: CMat,
    /// Pairing matrix with `α(x,y)ᵀ = -α(y,x)`, i.e. `αᵀ = -α` as a matrix.
    pub alpha: CMat,
}

impl std::fmt::Debug for QuasiFreeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuasiFreeState")
            .field("dim", &self.dim())
            .field("tr_gamma", &self.trace_gamma())
            .field("alpha_norm", &self.alpha_norm())
            .finish()
    }
}

/// Spectral admissibility diagnostics of a state.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AdmissibilityReport {
    pub hermiticity_defect: f64,
    pub antisymmetry_defect: f64,
    pub gamma_min_eigenvalue: f64,
    pub gamma_max_eigenvalue: f64,
    /// Smallest eigenvalue of `γ - γ² - αα*`.
    pub constraint_min_eigenvalue: f64,
    pub big_gamma_min_eigenvalue: f64,
    pub big_gamma_max_eigenvalue: f64,
    pub tolerance: f64,
    pub admissible: bool,
}

/// Per-site particle density and derived quantities.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DensityField {
    /// `ρ(x) = Σ_s γ((x,s),(x,s))/h³` per site (1/volume units).
    pub rho: Vec<f64>,
    /// Total particle number `λ = tr γ`.
    pub lambda: f64,
    /// Torus centroid by per-coordinate circular mean.
    pub centroid: [f64; 3],
}

/// Radial tail masses `Q(R) = Σ_{dist(x,centroid) ≥ R} ρ(x) h³`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DecayProfile {
    pub radii: Vec<f64>,
    pub tail_mass: Vec<f64>,
    /// Companion sequence `Q(R)·R²` for boundedness inspection.
    pub tail_mass_r2: Vec<f64>,
}

/// Sorted occupation data of `(γ, α)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OccupationSpectrum {
    /// Eigenvalues of `γ`, ascending.
    pub gamma_eigenvalues: Vec<f64>,
    /// Singular values of `α`, descending.
    pub alpha_singular_values: Vec<f64>,
    /// Count of `γ` eigenvalues strictly inside `(tol, 1-tol)`.
    pub fractional_count: usize,
    pub tolerance: f64,
}

impl QuasiFreeState {
    pub fn new(lattice: Arc<Lattice>, gamma: CMat, alpha: CMat) -> Result<Self> {
        let m = lattice.dim;
        if gamma.nrows() != m || gamma.ncols() != m || alpha.nrows() != m || alpha.ncols() != m {
            return Err(Error::Shape(format!(
                "state matrices must be {m}×{m}, got γ {}×{} and α {}×{}",
                gamma.nrows(),
                gamma.ncols(),
                alpha.nrows(),
                alpha.ncols()
            )));
        }
        Ok(QuasiFreeState {
            lattice,
            gamma,
            alpha,
        })
    }

    /// The vacuum `(0, 0)`.
    pub fn zero(lattice: Arc<Lattice>) -> Self {
        let m = lattice.dim;
        QuasiFreeState {
            lattice,
            gamma: CMat::zeros(m, m),
            alpha: CMat::zeros(m, m),
        }
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    pub fn trace_gamma(&self) -> f64 {
        linalg::trace_re(&self.gamma)
    }

    pub fn alpha_norm(&self) -> f64 {
        linalg::frob(&self.alpha)
    }

    /// Dimensionless per-site occupancy `n(x) = Σ_s γ((x,s),(x,s))`.
    pub fn site_occupancy(&self) -> Vec<f64> {
        let q = self.lattice.spin();
        (0..self.lattice.n_sites)
            .map(|x| (0..q).map(|s| self.gamma[(x * q + s, x * q + s)].re).sum())
            .collect()
    }

    /// The `2M×2M` block matrix `Γ = [[γ, α], [α*, 1-γ̄]]`.
    pub fn big_gamma(&self) -> CMat {
        let m = self.dim();
        let mut g = CMat::zeros(2 * m, 2 * m);
        for j in 0..m {
            for i in 0..m {
                g[(i, j)] = self.gamma[(i, j)];
                g[(i, m + j)] = self.alpha[(i, j)];
                g[(m + i, j)] = self.alpha[(j, i)].conj();
                g[(m + i, m + j)] = if i == j {
                    C64::new(1.0, 0.0) - self.gamma[(i, j)].conj()
                } else {
                    -self.gamma[(i, j)].conj()
                };
            }
        }
        g
    }

    /// Extract `(γ, α)` from a structured `2M×2M` block matrix, enforcing the
    /// exact symmetries.
    pub fn from_big_gamma(lattice: Arc<Lattice>, big: &CMat) -> Result<Self> {
        let m = lattice.dim;
        if big.nrows() != 2 * m || big.ncols() != 2 * m {
            return Err(Error::Shape("from_big_gamma: expected 2M×2M".into()));
        }
        let gamma_raw = CMat::from_fn(m, m, |i, j| big[(i, j)]);
        let alpha_raw = CMat::from_fn(m, m, |i, j| big[(i, m + j)]);
        let gamma = linalg::hermitian_part(&gamma_raw);
        let alpha = linalg::antisymmetric_part(&alpha_raw);
        QuasiFreeState::new(lattice, gamma, alpha)
    }

    /// Spectral admissibility report at absolute tolerance `tol`.
    pub fn check_admissible(&self, tol: f64) -> AdmissibilityReport {
        let herm = hermiticity_defect(&self.gamma);
        let anti = antisymmetry_defect(&self.alpha);
        let g_eigs = eigvalsh(&self.gamma);
        let alpha_adj = linalg::adjoint(&self.alpha);
        let aa = &self.alpha * &alpha_adj;
        let g2 = &self.gamma * &self.gamma;
        let constraint = &(&self.gamma - &g2) - &aa;
        let c_eigs = eigvalsh(&linalg::hermitian_part(&constraint));
        let big = self.big_gamma();
        let b_eigs = eigvalsh(&big);
        let gamma_min = g_eigs.first().copied().unwrap_or(0.0);
        let gamma_max = g_eigs.last().copied().unwrap_or(0.0);
        let c_min = c_eigs.first().copied().unwrap_or(0.0);
        let b_min = b_eigs.first().copied().unwrap_or(0.0);
        let b_max = b_eigs.last().copied().unwrap_or(0.0);
        let admissible = herm <= tol
            && anti <= tol
            && gamma_min >= -tol
            && gamma_max <= 1.0 + tol
            && c_min >= -tol
            && b_min >= -tol
            && b_max <= 1.0 + tol;
        AdmissibilityReport {
            hermiticity_defect: herm,
            antisymmetry_defect: anti,
            gamma_min_eigenvalue: gamma_min,
            gamma_max_eigenvalue: gamma_max,
            constraint_min_eigenvalue: c_min,
            big_gamma_min_eigenvalue: b_min,
            big_gamma_max_eigenvalue: b_max,
            tolerance: tol,
            admissible,
        }
    }

    /// Particle density with torus centroid.
    pub fn density(&self) -> DensityField {
        let lat = &self.lattice;
        let h3 = lat.spacing.powi(3);
        let occ = self.site_occupancy();
        let rho: Vec<f64> = occ.iter().map(|&n| n / h3).collect();
        let lambda = self.trace_gamma();
        let l = lat.config.box_length;
        let mut centroid = [0.0; 3];
        for c in 0..3 {
            let mut z = C64::new(0.0, 0.0);
            for (s, &n) in occ.iter().enumerate() {
                let x = lat.site_position(s)[c];
                z += C64::from_polar(n.max(0.0), 2.0 * std::f64::consts::PI * x / l);
            }
            // near-uniform densities have |z| ≈ 0; the centroid is then arbitrary
            let theta = if z.norm() > 1e-14 { z.arg() } else { 0.0 };
            centroid[c] = (theta / (2.0 * std::f64::consts::PI) * l).rem_euclid(l);
        }
        DensityField {
            rho,
            lambda,
            centroid,
        }
    }

    /// Tail masses outside radius `R` around the density centroid.
    pub fn decay_profile(&self, radii: &[f64]) -> Result<DecayProfile> {
        let l = self.lattice.config.box_length;
        for &r in radii {
            if !(r > 0.0) || r > l / 2.0 + 1e-12 {
                return Err(Error::Range(format!(
                    "decay radius {r} outside (0, L/2] on the torus"
                )));
            }
        }
        let field = self.density();
        let h3 = self.lattice.spacing.powi(3);
        let mut out = DecayProfile {
            radii: radii.to_vec(),
            tail_mass: Vec::with_capacity(radii.len()),
            tail_mass_r2: Vec::with_capacity(radii.len()),
        };
        for &r in radii {
            let mut q = 0.0;
            for s in 0..self.lattice.n_sites {
                if self
                    .lattice
                    .torus_distance(self.lattice.site_position(s), field.centroid)
                    >= r
                {
                    q += field.rho[s] * h3;
                }
            }
            out.tail_mass.push(q);
            out.tail_mass_r2.push(q * r * r);
        }
        Ok(out)
    }

    /// Occupation spectrum and fractional-filling diagnostic.
    pub fn occupation_spectrum(&self, tol: f64) -> OccupationSpectrum {
        let gamma_eigenvalues = eigvalsh(&self.gamma);
        let alpha_adj = linalg::adjoint(&self.alpha);
        let aa = &self.alpha * &alpha_adj;
        let mut sv: Vec<f64> = eigvalsh(&aa)
            .into_iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let fractional_count = gamma_eigenvalues
            .iter()
            .filter(|&&v| v > tol && v < 1.0 - tol)
            .count();
        OccupationSpectrum {
            gamma_eigenvalues,
            alpha_singular_values: sv,
            fractional_count,
            tolerance: tol,
        }
    }

    /// Restore exact feasibility after floating-point drift: hermitize and
    /// antisymmetrize, clip the `γ` spectrum to `[0,1]`, then rescale `α`
    /// until `γ - γ² - αα* ⪰ 0`.
    pub fn reproject(&mut self) {
        self.gamma = linalg::hermitian_part(&self.gamma);
        self.alpha = linalg::antisymmetric_part(&self.alpha);
        let e = eigh(&self.gamma);
        if e.values.first().copied().unwrap_or(0.0) < 0.0
            || e.values.last().copied().unwrap_or(0.0) > 1.0
        {
            self.gamma = linalg::spectral_function(&e, |x| x.clamp(0.0, 1.0));
        }
        let min_constraint = |alpha: &CMat, gamma: &CMat| -> f64 {
            let aa = alpha * &linalg::adjoint(alpha);
            let g2 = gamma * gamma;
            let c = &(gamma - &g2) - &aa;
            eigvalsh(&linalg::hermitian_part(&c))
                .first()
                .copied()
                .unwrap_or(0.0)
        };
        if min_constraint(&self.alpha, &self.gamma) < 0.0 {
            // bisect the α scale; s = 0 is always feasible since 0 ≤ γ ≤ 1
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let scaled = linalg::scale(&self.alpha, C64::new(mid, 0.0));
                if min_constraint(&scaled, &self.gamma) >= -1e-15 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 {
                    break;
                }
            }
            self.alpha = linalg::scale(&self.alpha, C64::new(lo, 0.0));
        }
    }
}

/// Recover `γ` from a pairing matrix by the lower branch of
/// `γ(1-γ) = αα*`, i.e. `γ = (1 - √(1 - 4αα*))/2`, which saturates the
/// admissibility constraint exactly.
pub fn purify_from_pairing(lattice: Arc<Lattice>, alpha: CMat) -> Result<QuasiFreeState> {
    let defect = antisymmetry_defect(&alpha);
    let scale = 1.0 + linalg::frob(&alpha);
    if defect > 1e-10 * scale {
        return Err(Error::Inadmissible(format!(
            "pairing matrix is not antisymmetric (defect {defect:.3e})"
        )));
    }
    let aa = &alpha * &linalg::adjoint(&alpha);
    let e = eigh(&linalg::hermitian_part(&aa));
    let radius = e.values.last().copied().unwrap_or(0.0);
    if radius > 0.25 + 1e-12 {
        return Err(Error::InfeasiblePairing {
            radius,
            hint: format!(
                "rescale α by {:.6} or shrink the envelope",
                (0.25 / radius).sqrt()
            ),
        });
    }
    let gamma = linalg::spectral_function(&e, |nu| {
        let disc = (1.0 - 4.0 * nu.clamp(0.0, 0.25)).max(0.0);
        0.5 * (1.0 - disc.sqrt())
    });
    QuasiFreeState::new(lattice, gamma, alpha)
}

/// Deterministic random admissible state.
///
/// Draws a Haar-like basis from a Ginibre QR, random occupations scaled so
/// that `tr γ = lambda`, and pair couplings `α = Σ_i c_i (v_{2i-1}v_{2i}ᵀ -
/// v_{2i}v_{2i-1}ᵀ)` with `|c_i|² ≤ min(f_a(1-f_b), (1-f_a)f_b)` so the
/// block constraint holds with strict margin. `pairing ∈ [0,1)` sets the
/// fraction of the maximal coupling; `real` restricts to real matrices.
pub fn random_admissible(
    lattice: Arc<Lattice>,
    rng: &mut impl Rng,
    lambda: f64,
    pairing: f64,
    real: bool,
) -> QuasiFreeState {
    let m = lattice.dim;
    assert!(lambda >= 0.0 && lambda <= m as f64);
    assert!((0.0..1.0).contains(&pairing));
    // random orthonormal basis from QR of a Ginibre matrix
    let a = CMat::from_fn(m, m, |_, _| {
        let re: f64 = rng.sample(rand_distr::StandardNormal);
        let im: f64 = if real {
            0.0
        } else {
            rng.sample(rand_distr::StandardNormal)
        };
        C64::new(re, im)
    });
    let qr = a.qr();
    let v = qr.compute_Q();
    // occupations ∝ u², rescaled to hit tr γ = λ with every f_i ≤ 0.95
    let mut f: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(2)).collect();
    let mut s: f64 = f.iter().sum();
    if s <= 0.0 {
        f = vec![1.0; m];
        s = m as f64;
    }
    let mut occ: Vec<f64> = f.iter().map(|&x| x * lambda / s).collect();
    for _ in 0..200 {
        let over: f64 = occ.iter().map(|&x| (x - 0.95).max(0.0)).sum();
        if over <= 1e-13 {
            break;
        }
        let free: f64 = occ.iter().filter(|&&x| x < 0.95).sum();
        let boost = if free > 0.0 { 1.0 + over / free } else { 1.0 };
        occ = occ.iter().map(|&x| (x * boost).min(0.95)).collect();
        // renormalize exactly onto the capped simplex
        let tot: f64 = occ.iter().sum();
        if (tot - lambda).abs() < 1e-13 {
            break;
        }
        let free: f64 = occ.iter().filter(|&&x| x < 0.95).sum();
        if free > 0.0 {
            let corr = 1.0 + (lambda - tot) / free;
            occ = occ
                .iter()
                .map(|&x| if x < 0.95 { (x * corr).min(0.95) } else { x })
                .collect();
        }
    }
    let mut gamma = CMat::zeros(m, m);
    for i in 0..m {
        let vi = CMat::from_fn(m, 1, |r, _| v[(r, i)]);
        let p = &vi * vi.adjoint();
        gamma += linalg::scale(&p, C64::new(occ[i], 0.0));
    }
    let mut alpha = CMat::zeros(m, m);
    for pair in 0..m / 2 {
        let (ia, ib) = (2 * pair, 2 * pair + 1);
        let (fa, fb) = (occ[ia], occ[ib]);
        let cmax = (fa * (1.0 - fb)).min((1.0 - fa) * fb).max(0.0).sqrt();
        if cmax <= 0.0 || pairing == 0.0 {
            continue;
        }
        let phase = if real {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
        };
        let c = phase * (pairing * rng.random::<f64>() * cmax);
        let va = CMat::from_fn(m, 1, |r, _| v[(r, ia)]);
        let vb = CMat::from_fn(m, 1, |r, _| v[(r, ib)]);
        let outer = &(&va * vb.transpose()) - &(&vb * va.transpose());
        alpha += linalg::scale(&outer, c);
    }
    let gamma = linalg::hermitian_part(&gamma);
    let alpha = linalg::antisymmetric_part(&alpha);
    QuasiFreeState {
        lattice,
        gamma,
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_lattice(q: usize) -> Arc<Lattice> {
        Arc::new(
            Lattice::build(LatticeConfig {
                box_length: 8.0,
                points_per_dim: 2,
                mass: 1.0,
                spin: q,
                coupling: 1.0,
            })
            .unwrap(),
        )
    }

    #[test]
    fn vacuum_is_admissible_with_zero_defects() {
        let st = QuasiFreeState::zero(small_lattice(1));
        let rep = st.check_admissible(1e-9);
        assert!(rep.admissible);
        assert_eq!(rep.hermiticity_defect, 0.0);
        assert_eq!(rep.antisymmetry_defect, 0.0);
        assert_eq!(rep.constraint_min_eigenvalue, 0.0);
    }

    #[test]
    fn two_mode_extreme_state_saturates_constraint() {
        // embed γ = diag(1/2,1/2), α = [[0,1/2],[-1/2,0]] in the first two modes
        let lat = small_lattice(1);
        let m = lat.dim;
        let mut gamma = CMat::zeros(m, m);
        let mut alpha = CMat::zeros(m, m);
        gamma[(0, 0)] = C64::new(0.5, 0.0);
        gamma[(1, 1)] = C64::new(0.5, 0.0);
        alpha[(0, 1)] = C64::new(0.5, 0.0);
        alpha[(1, 0)] = C64::new(-0.5, 0.0);
        let st = QuasiFreeState::new(lat, gamma, alpha).unwrap();
        let rep = st.check_admissible(1e-9);
        assert!(rep.admissible, "{rep:?}");
        assert!(rep.constraint_min_eigenvalue.abs() < 1e-12);
    }

    #[test]
    fn occupation_above_one_fails() {
        let lat = small_lattice(1);
        let m = lat.dim;
        let mut gamma = CMat::zeros(m, m);
        gamma[(0, 0)] = C64::new(1.2, 0.0);
        let st = QuasiFreeState::new(lat.clone(), gamma, CMat::zeros(m, m)).unwrap();
        let rep = st.check_admissible(1e-9);
        assert!(!rep.admissible);
        assert!((rep.gamma_max_eigenvalue - 1.2).abs() < 1e-12);
    }

    #[test]
    fn density_totals_match_trace() {
        let lat = small_lattice(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = random_admissible(lat.clone(), &mut rng, 3.0, 0.5, false);
        let field = st.density();
        let h3 = lat.spacing.powi(3);
        let total: f64 = field.rho.iter().map(|r| r * h3).sum();
        assert!((total - st.trace_gamma()).abs() < 1e-12 * (1.0 + total.abs()));
        assert!((field.lambda - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rank_one_density_normalization() {
        let lat = small_lattice(1);
        let m = lat.dim;
        let mut phi = vec![C64::new(0.0, 0.0); m];
        for (i, p) in phi.iter_mut().enumerate() {
            *p = C64::new((i as f64 * 0.7).cos(), (i as f64 * 0.3).sin());
        }
        let norm: f64 = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for p in phi.iter_mut() {
            *p /= norm;
        }
        let gamma = CMat::from_fn(m, m, |i, j| phi[i] * phi[j].conj());
        let st = QuasiFreeState::new(lat.clone(), gamma, CMat::zeros(m, m)).unwrap();
        let field = st.density();
        let h3 = lat.spacing.powi(3);
        let total: f64 = field.rho.iter().map(|r| r * h3).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn purify_zero_and_saturated() {
        let lat = small_lattice(1);
        let m = lat.dim;
        let st = purify_from_pairing(lat.clone(), CMat::zeros(m, m)).unwrap();
        assert!(linalg::frob(&st.gamma) == 0.0);

        let mut alpha = CMat::zeros(m, m);
        alpha[(0, 1)] = C64::new(0.5, 0.0);
        alpha[(1, 0)] = C64::new(-0.5, 0.0);
        let st = purify_from_pairing(lat, alpha).unwrap();
        assert!((st.gamma[(0, 0)].re - 0.5).abs() < 1e-12);
        assert!((st.gamma[(1, 1)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn purify_residual_is_zero_for_random_small_alpha() {
        let lat = small_lattice(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = lat.dim;
        let raw = CMat::from_fn(m, m, |_, _| {
            C64::new(
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            )
        });
        let mut alpha = linalg::antisymmetric_part(&raw);
        let aa = &alpha * &linalg::adjoint(&alpha);
        let top = eigvalsh(&aa).last().copied().unwrap();
        alpha = linalg::scale(&alpha, C64::new((0.1 / top).sqrt(), 0.0));
        let st = purify_from_pairing(lat, alpha.clone()).unwrap();
        let aa = &alpha * &linalg::adjoint(&alpha);
        let g2 = &st.gamma * &st.gamma;
        let resid = &(&st.gamma - &g2) - &aa;
        assert!(linalg::frob(&resid) < 1e-12);
        let rep = st.check_admissible(1e-9);
        assert!(rep.admissible);
        assert!(rep.constraint_min_eigenvalue.abs() < 1e-12);
    }

    #[test]
    fn purify_rejects_large_pairing() {
        let lat = small_lattice(1);
        let m = lat.dim;
        let mut alpha = CMat::zeros(m, m);
        alpha[(0, 1)] = C64::new(0.9, 0.0);
        alpha[(1, 0)] = C64::new(-0.9, 0.0);
        match purify_from_pairing(lat, alpha) {
            Err(Error::InfeasiblePairing { radius, .. }) => {
                assert!((radius - 0.81).abs() < 1e-12)
            }
            other => panic!("expected InfeasiblePairing, got {other:?}"),
        }
    }

    #[test]
    fn random_states_are_admissible() {
        let lat = small_lattice(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..6 {
            let st = random_admissible(lat.clone(), &mut rng, 2.0 + i as f64, 0.7, i % 2 == 0);
            let rep = st.check_admissible(1e-9);
            assert!(rep.admissible, "state {i}: {rep:?}");
            assert!((st.trace_gamma() - (2.0 + i as f64)).abs() < 1e-8);
        }
    }

    #[test]
    fn projector_spectrum_and_fractional_count() {
        let lat = small_lattice(1);
        let m = lat.dim;
        let mut gamma = CMat::zeros(m, m);
        for i in 0..3 {
            gamma[(i, i)] = C64::new(1.0, 0.0);
        }
        let st = QuasiFreeState::new(lat.clone(), gamma, CMat::zeros(m, m)).unwrap();
        let occ = st.occupation_spectrum(1e-9);
        assert_eq!(occ.fractional_count, 0);
        for v in &occ.gamma_eigenvalues {
            assert!(v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12);
        }
        // purified state from nonzero α must have fractional occupations
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = CMat::from_fn(m, m, |_, _| {
            C64::new(rng.sample::<f64, _>(rand_distr::StandardNormal), 0.0)
        });
        let mut alpha = linalg::antisymmetric_part(&raw);
        let aa = &alpha * &linalg::adjoint(&alpha);
        let top = eigvalsh(&aa).last().copied().unwrap();
        alpha = linalg::scale(&alpha, C64::new((0.2 / top).sqrt(), 0.0));
        let st = purify_from_pairing(lat, alpha).unwrap();
        assert!(st.occupation_spectrum(1e-9).fractional_count > 0);
    }

    #[test]
    fn decay_profile_uniform_and_point() {
        let lat = Arc::new(
            Lattice::build(LatticeConfig {
                box_length: 8.0,
                points_per_dim: 4,
                mass: 1.0,
                spin: 1,
                coupling: 1.0,
            })
            .unwrap(),
        );
        let m = lat.dim;
        // uniform density: Q(R) = λ·(fraction of sites at distance ≥ R)
        let lam = 2.0;
        let gamma = CMat::from_fn(m, m, |i, j| {
            if i == j {
                C64::new(lam / m as f64, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let st = QuasiFreeState::new(lat.clone(), gamma, CMat::zeros(m, m)).unwrap();
        let radii = [1.0, 2.0, 3.9];
        let prof = st.decay_profile(&radii).unwrap();
        let field = st.density();
        for (qi, &r) in prof.tail_mass.iter().zip(radii.iter()) {
            let count = (0..lat.n_sites)
                .filter(|&s| lat.torus_distance(lat.site_position(s), field.centroid) >= r)
                .count();
            let expect = lam * count as f64 / lat.n_sites as f64;
            assert!((qi - expect).abs() < 1e-10);
        }
        // point-supported density at the centroid: Q(R) = 0 for R > h
        let mut gamma = CMat::zeros(m, m);
        gamma[(0, 0)] = C64::new(1.0, 0.0);
        let st = QuasiFreeState::new(lat.clone(), gamma, CMat::zeros(m, m)).unwrap();
        let prof = st.decay_profile(&[1.5 * lat.spacing, 3.9]).unwrap();
        assert!(prof.tail_mass.iter().all(|&q| q.abs() < 1e-12));
        assert!(st.decay_profile(&[4.1]).is_err());
    }

    #[test]
    fn big_gamma_spectrum_matches_constraint_equivalence() {
        // both directions of: Γ-spectrum in [0,1] ⟺ γ-γ²-αα* ⪰ 0 (+ symmetry)
        let lat = small_lattice(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let good = random_admissible(lat.clone(), &mut rng, 3.0, 0.6, false);
        let rep = good.check_admissible(1e-9);
        assert!(rep.big_gamma_min_eigenvalue >= -1e-9);
        assert!(rep.big_gamma_max_eigenvalue <= 1.0 + 1e-9);
        assert!(rep.constraint_min_eigenvalue >= -1e-9);

        let mut bad = good.clone();
        bad.alpha = linalg::scale(&bad.alpha, C64::new(3.0, 0.0));
        let rep = bad.check_admissible(1e-9);
        assert_eq!(
            rep.big_gamma_min_eigenvalue < -1e-9 || rep.big_gamma_max_eigenvalue > 1.0 + 1e-9,
            rep.constraint_min_eigenvalue < -1e-9,
            "equivalence must hold in the violated direction too"
        );
    }

    #[test]
    fn reproject_restores_feasibility() {
        let lat = small_lattice(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut st = random_admissible(lat, &mut rng, 3.0, 0.5, false);
        st.gamma = linalg::scale(&st.gamma, C64::new(1.05, 0.0));
        st.alpha = linalg::scale(&st.alpha, C64::new(1.4, 0.0));
        st.reproject();
        let rep = st.check_admissible(1e-9);
        assert!(rep.admissible, "{rep:?}");
    }
}
