//! Periodic-box spectral discretization.
//!
//! Sites live on a cubic grid `x_j ∈ [0,L)³` with spacing `h = L/N`; Fourier
//! modes are `k = (2π/L)·n` with `n ∈ {-N/2, …, N/2-1}³` stored in FFT order.
//! The pseudo-relativistic kinetic operator acts as the multiplier
//! `t(k) = √(|k|²+m²) - m`, and the `1/|x-y|` interaction is represented by
//! the difference kernel
//!
//! `W(d) = (1/L³) Σ_{k≠0} (4π/|k|²) e^{ik·d}`
//!
//! with the zero mode dropped (uniform neutralizing background). Relative to
//! the identification `W(d) ≈ 1/|d|` at short separations the kernel carries
//! a constant offset `-ξ/L` with `ξ = 2.8372974794806…` (simple-cubic
//! point-charge-with-background constant); the offset is stored as
//! [`Lattice::background_offset`] and quoted wherever energies at different
//! particle numbers are compared.
//!
//! The basis is orthonormalized per site (`e_x = h^{-3/2}·δ_x`), so traces,
//! `D(ρ,ρ)`, exchange and pairing sums are plain matrix sums with no volume
//! factors; densities relate by `ρ(x) = γ_xx/h³`.

use crate::error::Error;
use crate::linalg::{to_complex, C64, CMat, RMat};
use crate::Result;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Simple-cubic lattice constant: `lim_{x→0} [1/|x| - G_per(x)]·L` for the
/// periodic Coulomb Green's function with neutralizing background.
pub const CUBIC_BACKGROUND_XI: f64 = 2.837_297_479_480_619;

/// Critical coupling `4/π` above which the continuum functional is unbounded
/// below for every particle number.
pub fn kappa_critical() -> f64 {
    4.0 / std::f64::consts::PI
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatticeConfig {
    /// Box length `L` (length units).
    pub box_length: f64,
    /// Grid points per dimension `N` (even, ≥ 2).
    pub points_per_dim: usize,
    /// Fermion mass `m ≥ 0` (energy units).
    pub mass: f64,
    /// Spin multiplicity `q ≥ 1`.
    pub spin: usize,
    /// Coupling `κ ≥ 0`.
    pub coupling: f64,
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.box_length > 0.0) {
            return Err(Error::Config(format!(
                "box_length must be > 0, got {}",
                self.box_length
            )));
        }
        if self.points_per_dim < 2 || self.points_per_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "points_per_dim must be even and ≥ 2, got {}",
                self.points_per_dim
            )));
        }
        if self.mass < 0.0 {
            return Err(Error::Config(format!("mass must be ≥ 0, got {}", self.mass)));
        }
        if self.spin < 1 {
            return Err(Error::Config(format!("spin must be ≥ 1, got {}", self.spin)));
        }
        if self.coupling < 0.0 {
            return Err(Error::Config(format!(
                "coupling must be ≥ 0, got {}",
                self.coupling
            )));
        }
        Ok(())
    }

    /// `κ ≥ 4/π`: the continuum energy is unbounded below; runs are allowed
    /// so the instability can be observed, but callers should surface this.
    pub fn coupling_supercritical(&self) -> bool {
        self.coupling >= kappa_critical()
    }
}

/// Immutable spectral lattice shared by all operations.
pub struct Lattice {
    pub config: LatticeConfig,
    /// Grid spacing `h = L/N`.
    pub spacing: f64,
    /// Number of sites `N³`.
    pub n_sites: usize,
    /// State-space dimension `M = q·N³`.
    pub dim: usize,
    /// `√(|k|²+m²) - m` per mode (FFT order).
    pub t_massive: Vec<f64>,
    /// `√(|k|²+m²)` per mode.
    pub k_massive: Vec<f64>,
    /// `|k|` per mode.
    pub t_massless: Vec<f64>,
    /// Coulomb difference kernel `W(d) ≥ 0` per difference site.
    pub w_kernel: Vec<f64>,
    /// Number of kernel entries clamped to zero.
    pub clamp_count: usize,
    /// Constant offset `ξ/L` between `W` and the `1/|d|` identification.
    pub background_offset: f64,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lattice")
            .field("config", &self.config)
            .field("n_sites", &self.n_sites)
            .field("clamp_count", &self.clamp_count)
            .finish()
    }
}

impl Clone for Lattice {
    fn clone(&self) -> Self {
        Lattice {
            config: self.config,
            spacing: self.spacing,
            n_sites: self.n_sites,
            dim: self.dim,
            t_massive: self.t_massive.clone(),
            k_massive: self.k_massive.clone(),
            t_massless: self.t_massless.clone(),
            w_kernel: self.w_kernel.clone(),
            clamp_count: self.clamp_count,
            background_offset: self.background_offset,
            fft_fwd: self.fft_fwd.clone(),
            fft_inv: self.fft_inv.clone(),
        }
    }
}

/// Integer frequency for FFT index `i` of `n` points: `0,…,N/2-1,-N/2,…,-1`.
#[inline]
pub fn fft_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Lattice {
    pub fn build(config: LatticeConfig) -> Result<Lattice> {
        config.validate()?;
        let n = config.points_per_dim;
        let n_sites = n * n * n;
        let l = config.box_length;
        let h = l / n as f64;
        let m = config.mass;
        let two_pi_over_l = 2.0 * std::f64::consts::PI / l;

        let mut t_massive = vec![0.0; n_sites];
        let mut k_massive = vec![0.0; n_sites];
        let mut t_massless = vec![0.0; n_sites];
        let mut coulomb_hat = vec![C64::new(0.0, 0.0); n_sites];
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let idx = (ix * n + iy) * n + iz;
                    let kx = two_pi_over_l * fft_freq(ix, n) as f64;
                    let ky = two_pi_over_l * fft_freq(iy, n) as f64;
                    let kz = two_pi_over_l * fft_freq(iz, n) as f64;
                    let k2 = kx * kx + ky * ky + kz * kz;
                    let kk = (k2 + m * m).sqrt();
                    k_massive[idx] = kk;
                    t_massive[idx] = kk - m;
                    t_massless[idx] = k2.sqrt();
                    if idx != 0 {
                        coulomb_hat[idx] = C64::new(4.0 * std::f64::consts::PI / k2, 0.0);
                    }
                }
            }
        }

        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(n);
        let fft_inv = planner.plan_fft_inverse(n);

        let mut lattice = Lattice {
            config,
            spacing: h,
            n_sites,
            dim: n_sites * config.spin,
            t_massive,
            k_massive,
            t_massless,
            w_kernel: Vec::new(),
            clamp_count: 0,
            background_offset: CUBIC_BACKGROUND_XI / l,
            fft_fwd,
            fft_inv,
        };

        // W(d) = (1/L³) Σ_{k≠0} (4π/|k|²) e^{ik·d}: unnormalized inverse FFT
        // of the mode coefficients. Truncation can ring slightly negative at
        // small N; clamp and record.
        lattice.fft3(&mut coulomb_hat, false);
        let mut clamp_count = 0;
        let w_kernel: Vec<f64> = coulomb_hat
            .iter()
            .map(|c| {
                let v = c.re / (l * l * l);
                if v < 0.0 {
                    clamp_count += 1;
                    0.0
                } else {
                    v
                }
            })
            .collect();
        lattice.w_kernel = w_kernel;
        lattice.clamp_count = clamp_count;
        Ok(lattice)
    }

    /// Same matrices, rescaled box `L → δ·L` (mass, spin, coupling unchanged).
    pub fn scaled(&self, delta: f64) -> Result<Lattice> {
        let mut cfg = self.config;
        cfg.box_length *= delta;
        Lattice::build(cfg)
    }

    #[inline]
    pub fn points_per_dim(&self) -> usize {
        self.config.points_per_dim
    }

    #[inline]
    pub fn spin(&self) -> usize {
        self.config.spin
    }

    /// Site position for a site index.
    pub fn site_position(&self, site: usize) -> [f64; 3] {
        let n = self.points_per_dim();
        let iz = site % n;
        let iy = (site / n) % n;
        let ix = site / (n * n);
        [
            ix as f64 * self.spacing,
            iy as f64 * self.spacing,
            iz as f64 * self.spacing,
        ]
    }

    /// Difference site index `(x - y) mod N` componentwise.
    #[inline]
    pub fn diff_index(&self, sx: usize, sy: usize) -> usize {
        let n = self.points_per_dim();
        let (zx, yx, xx) = (sx % n, (sx / n) % n, sx / (n * n));
        let (zy, yy, xy) = (sy % n, (sy / n) % n, sy / (n * n));
        let dx = (xx + n - xy) % n;
        let dy = (yx + n - yy) % n;
        let dz = (zx + n - zy) % n;
        (dx * n + dy) * n + dz
    }

    /// Minimum-image Euclidean distance between two positions on the torus.
    pub fn torus_distance(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        let l = self.config.box_length;
        let mut d2 = 0.0;
        for i in 0..3 {
            let mut d = (a[i] - b[i]).abs() % l;
            if d > l / 2.0 {
                d = l - d;
            }
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Site index of the box center `(N/2, N/2, N/2)`.
    pub fn center_site(&self) -> usize {
        let n = self.points_per_dim();
        let c = n / 2;
        (c * n + c) * n + c
    }

    /// Site-parity map about the box center: `x ↦ (2c - x) mod L`.
    pub fn parity_map(&self) -> Vec<usize> {
        let n = self.points_per_dim();
        let refl = |i: usize| (n - i) % n;
        let mut map = vec![0usize; self.n_sites];
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let s = (ix * n + iy) * n + iz;
                    map[s] = (refl(ix) * n + refl(iy)) * n + refl(iz);
                }
            }
        }
        map
    }

    /// Regularized `1/|x - x_c|` sample: the difference kernel centered at the
    /// box center. Shares the kernel regularization used by the energy terms.
    pub fn coulomb_center_sample(&self) -> Vec<f64> {
        let c = self.center_site();
        (0..self.n_sites)
            .map(|s| self.w_kernel[self.diff_index(s, c)])
            .collect()
    }

    /// In-place 3D FFT in FFT ordering; `forward` uses `e^{-ik·x}` and the
    /// inverse is unnormalized (round trip multiplies by `N³`).
    pub fn fft3(&self, buf: &mut [C64], forward: bool) {
        let n = self.points_per_dim();
        assert_eq!(buf.len(), self.n_sites, "fft3: buffer must hold N³ entries");
        let fft = if forward {
            self.fft_fwd.clone()
        } else {
            self.fft_inv.clone()
        };
        let mut line = vec![C64::new(0.0, 0.0); n];
        // axis 2 (contiguous)
        for row in 0..n * n {
            fft.process(&mut buf[row * n..(row + 1) * n]);
        }
        // axis 1 (stride n)
        for ix in 0..n {
            for iz in 0..n {
                for iy in 0..n {
                    line[iy] = buf[(ix * n + iy) * n + iz];
                }
                fft.process(&mut line);
                for iy in 0..n {
                    buf[(ix * n + iy) * n + iz] = line[iy];
                }
            }
        }
        // axis 0 (stride n²)
        for iy in 0..n {
            for iz in 0..n {
                for ix in 0..n {
                    line[ix] = buf[(ix * n + iy) * n + iz];
                }
                fft.process(&mut line);
                for ix in 0..n {
                    buf[(ix * n + iy) * n + iz] = line[ix];
                }
            }
        }
    }

    /// Apply a real Fourier multiplier to one spin component of a lattice
    /// function: `inverse-transform(table · transform(field))`. Exact on
    /// plane waves.
    pub fn apply_multiplier(&self, field: &[C64], table: &[f64]) -> Result<Vec<C64>> {
        if field.len() != self.n_sites || table.len() != self.n_sites {
            return Err(Error::Shape(format!(
                "apply_multiplier: field len {} / table len {} != N³ = {}",
                field.len(),
                table.len(),
                self.n_sites
            )));
        }
        let mut buf = field.to_vec();
        self.fft3(&mut buf, true);
        for (b, t) in buf.iter_mut().zip(table.iter()) {
            *b *= *t;
        }
        self.fft3(&mut buf, false);
        let norm = 1.0 / self.n_sites as f64;
        for b in buf.iter_mut() {
            *b *= norm;
        }
        Ok(buf)
    }

    /// Quadratic form `⟨f, Op f⟩` of a multiplier in the orthonormal basis.
    pub fn multiplier_quadratic_form(&self, field: &[C64], table: &[f64]) -> Result<f64> {
        let mut buf = field.to_vec();
        if buf.len() != self.n_sites || table.len() != self.n_sites {
            return Err(Error::Shape("multiplier_quadratic_form: size mismatch".into()));
        }
        self.fft3(&mut buf, true);
        let norm = 1.0 / self.n_sites as f64;
        Ok(buf
            .iter()
            .zip(table.iter())
            .map(|(c, t)| c.norm_sqr() * t * norm)
            .sum())
    }

    /// Circulant profile `τ(d) = (1/N³) Σ_k table(k) e^{ik·d}` of a real
    /// multiplier; the matrix of the operator is `A[x,y] = τ(x-y)`.
    pub fn multiplier_profile(&self, table: &[f64]) -> Vec<f64> {
        assert_eq!(table.len(), self.n_sites);
        let mut buf: Vec<C64> = table.iter().map(|&t| C64::new(t, 0.0)).collect();
        self.fft3(&mut buf, false);
        let norm = 1.0 / self.n_sites as f64;
        buf.iter().map(|c| c.re * norm).collect()
    }

    /// Site-level matrix (`N³ × N³`, real symmetric) of a real multiplier.
    pub fn multiplier_matrix_site(&self, table: &[f64]) -> RMat {
        let profile = self.multiplier_profile(table);
        let ns = self.n_sites;
        RMat::from_fn(ns, ns, |x, y| profile[self.diff_index(x, y)])
    }

    /// Spin-blocked kinetic matrix (`M × M` with `M = qN³`), block-diagonal in
    /// spin: `T = √(-Δ+m²) - m` (massive) or `√(-Δ)` (massless).
    pub fn kinetic_matrix(&self, massive: bool) -> CMat {
        let site = self.kinetic_matrix_site(massive);
        self.expand_spin(&site)
    }

    /// Site-level kinetic matrix without spin blocking.
    pub fn kinetic_matrix_site(&self, massive: bool) -> RMat {
        let table = if massive {
            &self.t_massive
        } else {
            &self.t_massless
        };
        self.multiplier_matrix_site(table)
    }

    /// Expand a site-level operator to the site-spin space (`A ⊗ I_q`).
    pub fn expand_spin(&self, site: &RMat) -> CMat {
        let q = self.spin();
        let m = self.dim;
        let c = to_complex(site);
        if q == 1 {
            return c;
        }
        let mut out = CMat::zeros(m, m);
        for x in 0..self.n_sites {
            for y in 0..self.n_sites {
                let v = c[(x, y)];
                for s in 0..q {
                    out[(x * q + s, y * q + s)] = v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: f64, n: usize, m: f64, q: usize, kappa: f64) -> LatticeConfig {
        LatticeConfig {
            box_length: l,
            points_per_dim: n,
            mass: m,
            spin: q,
            coupling: kappa,
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Lattice::build(cfg(10.0, 3, 1.0, 1, 1.0)).is_err());
        assert!(Lattice::build(cfg(-1.0, 4, 1.0, 1, 1.0)).is_err());
        assert!(Lattice::build(cfg(10.0, 4, 1.0, 0, 1.0)).is_err());
    }

    #[test]
    fn kinetic_multiplier_closed_form() {
        let lat = Lattice::build(cfg(10.0, 2, 1.0, 1, 1.0)).unwrap();
        assert_eq!(lat.t_massive[0], 0.0);
        // corner mode n = (-1,-1,-1): k = (2π/10)·(-1,-1,-1)
        let k = 2.0 * std::f64::consts::PI / 10.0;
        let expect = (3.0 * k * k + 1.0).sqrt() - 1.0;
        let idx = (1 * 2 + 1) * 2 + 1;
        assert!((lat.t_massive[idx] - expect).abs() < 1e-14);
    }

    #[test]
    fn massless_dispersion() {
        let lat = Lattice::build(cfg(8.0, 4, 0.0, 1, 1.0)).unwrap();
        for i in 0..lat.n_sites {
            assert!((lat.t_massive[i] - lat.t_massless[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_symmetric_and_nonnegative() {
        let lat = Lattice::build(cfg(10.0, 4, 1.0, 1, 1.0)).unwrap();
        let n = lat.points_per_dim();
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let d = (ix * n + iy) * n + iz;
                    let dm = (((n - ix) % n) * n + (n - iy) % n) * n + (n - iz) % n;
                    assert!((lat.w_kernel[d] - lat.w_kernel[dm]).abs() < 1e-12);
                    assert!(lat.w_kernel[d] >= 0.0);
                }
            }
        }
        assert!(lat.w_kernel[0].is_finite());
    }

    #[test]
    fn kernel_matches_direct_mode_sum() {
        let lat = Lattice::build(cfg(7.0, 4, 1.0, 1, 1.0)).unwrap();
        let n = lat.points_per_dim();
        let l = 7.0;
        let two_pi_over_l = 2.0 * std::f64::consts::PI / l;
        // direct cosine sum at a couple of differences
        for &site in &[1usize, 22, 37] {
            let p = lat.site_position(site);
            let mut s = 0.0;
            for ix in 0..n {
                for iy in 0..n {
                    for iz in 0..n {
                        if ix == 0 && iy == 0 && iz == 0 {
                            continue;
                        }
                        let kx = two_pi_over_l * fft_freq(ix, n) as f64;
                        let ky = two_pi_over_l * fft_freq(iy, n) as f64;
                        let kz = two_pi_over_l * fft_freq(iz, n) as f64;
                        let k2 = kx * kx + ky * ky + kz * kz;
                        let phase = kx * p[0] + ky * p[1] + kz * p[2];
                        s += 4.0 * std::f64::consts::PI / k2 * phase.cos();
                    }
                }
            }
            s /= l * l * l;
            let got = lat.w_kernel[lat.diff_index(site, 0)];
            assert!((got - s.max(0.0)).abs() < 1e-10, "site {site}: {got} vs {s}");
        }
    }

    #[test]
    fn multiplier_exact_on_plane_waves() {
        let lat = Lattice::build(cfg(10.0, 4, 1.3, 1, 1.0)).unwrap();
        let n = lat.points_per_dim();
        // constant field under t(k): zero
        let field = vec![C64::new(1.0, 0.0); lat.n_sites];
        let out = lat.apply_multiplier(&field, &lat.t_massive).unwrap();
        for v in &out {
            assert!(v.norm() < 1e-12);
        }
        // plane wave e^{ik₀·x} under K(k): eigenvalue √(|k₀|²+m²)
        let mode = (1 * n + 2) * n + 3;
        let two_pi_over_l = 2.0 * std::f64::consts::PI / 10.0;
        let k0 = [
            two_pi_over_l * fft_freq(1, n) as f64,
            two_pi_over_l * fft_freq(2, n) as f64,
            two_pi_over_l * fft_freq(3, n) as f64,
        ];
        let pw: Vec<C64> = (0..lat.n_sites)
            .map(|s| {
                let x = lat.site_position(s);
                C64::from_polar(1.0, k0[0] * x[0] + k0[1] * x[1] + k0[2] * x[2])
            })
            .collect();
        let out = lat.apply_multiplier(&pw, &lat.k_massive).unwrap();
        let expect = lat.k_massive[mode];
        for (o, p) in out.iter().zip(pw.iter()) {
            assert!((o - p * expect).norm() < 1e-10);
        }
    }

    #[test]
    fn multiplier_linearity_against_direct_sum() {
        // N = 2: compare against O(N⁶) direct double-sum evaluation
        let lat = Lattice::build(cfg(5.0, 2, 0.7, 1, 1.0)).unwrap();
        let prof = lat.multiplier_profile(&lat.k_massive);
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for s in 0..lat.n_sites {
            f1.push(C64::new((s as f64 * 0.31).sin(), (s as f64 * 0.17).cos()));
            f2.push(C64::new((s as f64 * 0.73).cos(), (s as f64 * 0.41).sin()));
        }
        let a = C64::new(0.6, -0.2);
        let b = C64::new(-1.1, 0.4);
        let combo: Vec<C64> = (0..lat.n_sites).map(|s| a * f1[s] + b * f2[s]).collect();
        let lhs = lat.apply_multiplier(&combo, &lat.k_massive).unwrap();
        // direct: (Op f)(x) = Σ_y τ(x-y) f(y)
        for x in 0..lat.n_sites {
            let mut direct = C64::new(0.0, 0.0);
            for y in 0..lat.n_sites {
                direct += prof[lat.diff_index(x, y)] * (a * f1[y] + b * f2[y]);
            }
            assert!((lhs[x] - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn kinetic_matrix_trace_and_hermiticity() {
        let lat = Lattice::build(cfg(9.0, 4, 1.0, 2, 1.0)).unwrap();
        let t = lat.kinetic_matrix(true);
        let expect: f64 = lat.t_massive.iter().sum::<f64>() * lat.spin() as f64;
        let tr: f64 = (0..lat.dim).map(|i| t[(i, i)].re).sum();
        assert!((tr - expect).abs() < 1e-9 * expect.max(1.0));
        let defect = crate::linalg::hermiticity_defect(&t);
        assert!(defect < 1e-12);
    }

    #[test]
    fn kinetic_matrix_smallest_eigenvalue_zero() {
        let lat = Lattice::build(cfg(9.0, 4, 1.0, 1, 1.0)).unwrap();
        let t = lat.kinetic_matrix_site(true);
        let (vals, _) = crate::linalg::eigh_real(&t);
        assert!(vals[0].abs() < 1e-10);
        assert!(vals.iter().all(|&v| v > -1e-10));
    }

    #[test]
    fn parseval_quadratic_form_matches_matrix() {
        let lat = Lattice::build(cfg(6.0, 4, 0.8, 1, 1.0)).unwrap();
        let k = lat.multiplier_matrix_site(&lat.k_massive);
        let f: Vec<C64> = (0..lat.n_sites)
            .map(|s| C64::new((0.13 * s as f64).sin(), (0.29 * s as f64).cos()))
            .collect();
        let qf = lat.multiplier_quadratic_form(&f, &lat.k_massive).unwrap();
        let mut direct = C64::new(0.0, 0.0);
        for x in 0..lat.n_sites {
            for y in 0..lat.n_sites {
                direct += f[x].conj() * k[(x, y)] * f[y];
            }
        }
        assert!((qf - direct.re).abs() < 1e-10 * (1.0 + qf.abs()));
        assert!(direct.im.abs() < 1e-10);
    }

    #[test]
    fn translation_covariance() {
        let lat = Lattice::build(cfg(6.0, 4, 1.0, 1, 1.0)).unwrap();
        let n = lat.points_per_dim();
        let f: Vec<C64> = (0..lat.n_sites)
            .map(|s| C64::new((0.37 * s as f64).sin(), (0.11 * s as f64).cos()))
            .collect();
        // cyclic shift by one site along z
        let shift = |g: &[C64]| -> Vec<C64> {
            let mut out = vec![C64::new(0.0, 0.0); g.len()];
            for ix in 0..n {
                for iy in 0..n {
                    for iz in 0..n {
                        out[(ix * n + iy) * n + (iz + 1) % n] = g[(ix * n + iy) * n + iz];
                    }
                }
            }
            out
        };
        let a = lat
            .apply_multiplier(&shift(&f), &lat.t_massive)
            .unwrap();
        let b = shift(&lat.apply_multiplier(&f, &lat.t_massive).unwrap());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn background_offset_matches_kernel_shortfall() {
        // at moderate separations W(d) ≈ 1/|d| - ξ/L
        let lat = Lattice::build(cfg(16.0, 16, 1.0, 1, 1.0)).unwrap();
        let n = lat.points_per_dim();
        let mut worst = 0.0f64;
        for dist in 3..=5usize {
            let d = (0 * n + 0) * n + dist;
            let r = dist as f64 * lat.spacing;
            let offset = 1.0 / r - lat.w_kernel[d];
            worst = worst.max((offset - lat.background_offset).abs());
        }
        assert!(
            worst < 0.35 * lat.background_offset,
            "offset mismatch: {worst} vs ξ/L = {}",
            lat.background_offset
        );
    }
}
