//! Array steering vectors, LoS channel assembly and Rician channel sampling.
//!
//! The AP-to-IRS channel `G` is `N x M` and the IRS-to-user channel `f_k` is
//! `N x 1`. IRS elements are indexed y-major: element `iy * N_z + iz`, which is
//! the ordering produced by `a_y ⊗ a_z`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::geometry::{self, LinkAngles, SystemGeometry, Vec3};
use crate::metrics::PhaseConfig;
use crate::{ComplexMatrix, Error, Result, C64};

/// Uniform linear steering vector `[1, e^{-j k s u}, ..., e^{-j k (n-1) s u}]^T`
/// where `u` is the direction cosine and `k = 2 pi / wavelength`.
pub fn steering_vector(count: usize, spacing: f64, wavelength: f64, direction: f64) -> ComplexMatrix {
    let k = 2.0 * PI * spacing / wavelength * direction;
    ComplexMatrix::from_fn(count, 1, |n, _| C64::from_polar(1.0, -k * n as f64))
}

/// AP steering vector; the direction cosine is `sin θ · cos ξ`.
pub fn steering_ap(sin_theta: f64, cos_xi: f64, m: usize, spacing: f64, wavelength: f64) -> ComplexMatrix {
    steering_vector(m, spacing, wavelength, sin_theta * cos_xi)
}

/// IRS steering vector along one axis. Pass `cos ξ` for the y axis and
/// `sin ξ` for the z axis.
pub fn steering_irs(sin_theta: f64, xi_ratio: f64, count: usize, spacing: f64, wavelength: f64) -> ComplexMatrix {
    steering_vector(count, spacing, wavelength, sin_theta * xi_ratio)
}

fn irs_response(geom: &SystemGeometry, a: &LinkAngles) -> ComplexMatrix {
    let ay = steering_irs(a.sin_theta, a.cos_xi, geom.irs_cols, geom.spacing_irs_y, geom.wavelength);
    let az = steering_irs(a.sin_theta, a.sin_xi, geom.irs_rows, geom.spacing_irs_z, geom.wavelength);
    ay.kronecker(&az)
}

/// LoS component of the AP-to-IRS channel, `a_y ⊗ a_z ⊗ a_AP^H` (N x M).
pub fn los_ap_irs(geom: &SystemGeometry) -> Result<ComplexMatrix> {
    let a = geometry::angles_ap_irs(geom)?;
    let irs = irs_response(geom, &a);
    let ap = steering_ap(a.sin_theta, a.cos_xi, geom.num_ap_antennas, geom.spacing_ap, geom.wavelength);
    Ok(irs.kronecker(&ap.adjoint()))
}

/// LoS component of the IRS-to-user channel, `a_y ⊗ a_z` (N x 1).
pub fn los_irs_user(geom: &SystemGeometry, user: &Vec3) -> Result<ComplexMatrix> {
    let a = geometry::angles_irs_user(geom, user)?;
    Ok(irs_response(geom, &a))
}

/// Distance-dependent path loss `β0 (d / D0)^(-η)`.
pub fn path_loss(distance: f64, exponent: f64, ref_loss: f64, ref_distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("path loss needs positive distance, got {distance}")));
    }
    Ok(ref_loss * (distance / ref_distance).powf(-exponent))
}

/// Rician factors (linear) and path-loss law parameters.
///
/// A Rician factor of `f64::INFINITY` yields a pure LoS channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicianParams {
    pub rician_ap_irs: f64,
    pub rician_irs_user: Vec<f64>,
    pub pathloss_exponent_ap_irs: f64,
    pub pathloss_exponent_user: f64,
    pub ref_pathloss: f64,
    pub ref_distance: f64,
}

impl RicianParams {
    pub fn validate(&self) -> Result<()> {
        let factors_ok = self.rician_ap_irs >= 0.0 && self.rician_irs_user.iter().all(|b| *b >= 0.0);
        if !factors_ok {
            return Err(Error::InvalidParameter("Rician factors must be non-negative".into()));
        }
        if !(self.ref_pathloss > 0.0 && self.ref_distance > 0.0) {
            return Err(Error::InvalidParameter("reference path loss and distance must be positive".into()));
        }
        Ok(())
    }
}

/// LoS/NLoS amplitude weights `(sqrt(β/(β+1)), sqrt(1/(β+1)))`.
pub fn rician_weights(beta: f64) -> (f64, f64) {
    if beta.is_infinite() {
        (1.0, 0.0)
    } else {
        ((beta / (beta + 1.0)).sqrt(), (1.0 / (beta + 1.0)).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosChannels {
    /// N x M.
    pub g_bar: ComplexMatrix,
    /// One N x 1 column per user.
    pub f_bar: Vec<ComplexMatrix>,
}

impl LosChannels {
    pub fn assemble(geom: &SystemGeometry, users: &[Vec3]) -> Result<Self> {
        Ok(Self {
            g_bar: los_ap_irs(geom)?,
            f_bar: users.iter().map(|u| los_irs_user(geom, u)).collect::<Result<_>>()?,
        })
    }

    pub fn num_users(&self) -> usize {
        self.f_bar.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// N x M.
    pub g: ComplexMatrix,
    /// One N x 1 column per user.
    pub f: Vec<ComplexMatrix>,
    pub los: LosChannels,
    pub pathloss_ap_irs: f64,
    pub pathloss_user: Vec<f64>,
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.f.len()
    }

    pub fn num_irs_elements(&self) -> usize {
        self.g.nrows()
    }

    pub fn num_ap_antennas(&self) -> usize {
        self.g.ncols()
    }

    /// Effective MISO rows `f_k^H Φ G`, stacked into a K x M matrix.
    pub fn effective_channels(&self, phases: &PhaseConfig) -> Result<ComplexMatrix> {
        let k = self.num_users();
        let m = self.num_ap_antennas();
        let mut h = ComplexMatrix::zeros(k, m);
        for (u, f) in self.f.iter().enumerate() {
            h.set_row(u, &effective_miso(f, phases, &self.g)?.row(0));
        }
        Ok(h)
    }

    /// The path-loss-scaled LoS-only channels `(sqrt(α^AI) Ḡ, sqrt(α^IU_k) f̄_k)`.
    pub fn los_only(&self) -> ChannelRealization {
        ChannelRealization {
            g: self.los.g_bar.scale(self.pathloss_ap_irs.sqrt()),
            f: self
                .los
                .f_bar
                .iter()
                .zip(&self.pathloss_user)
                .map(|(f, a)| f.scale(a.sqrt()))
                .collect(),
            los: self.los.clone(),
            pathloss_ap_irs: self.pathloss_ap_irs,
            pathloss_user: self.pathloss_user.clone(),
        }
    }
}

/// Matrix of i.i.d. circularly-symmetric CN(0, 1) entries.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
    })
}

/// Draws one Rician realization around the given LoS channels.
///
/// `G = sqrt(α β/(β+1)) Ḡ + sqrt(α/(β+1)) G̃` with `G̃` i.i.d. CN(0, 1), and
/// likewise for each `f_k`. NLoS draws happen in a fixed order (G first, then
/// users in index order) so realizations are reproducible per stream.
pub fn sample_channels<R: Rng + ?Sized>(
    los: &LosChannels,
    params: &RicianParams,
    pathloss_ap_irs: f64,
    pathloss_user: &[f64],
    rng: &mut R,
) -> Result<ChannelRealization> {
    let k = los.num_users();
    if pathloss_user.len() != k || params.rician_irs_user.len() < k {
        return Err(Error::Dimension(format!(
            "{k} users but {} path losses and {} Rician factors",
            pathloss_user.len(),
            params.rician_irs_user.len()
        )));
    }
    let (n, m) = los.g_bar.shape();
    let (wl, wn) = rician_weights(params.rician_ap_irs);
    let amp = pathloss_ap_irs.sqrt();
    let g = los.g_bar.scale(amp * wl) + complex_gaussian(n, m, rng).scale(amp * wn);
    let f = los
        .f_bar
        .iter()
        .zip(pathloss_user)
        .zip(&params.rician_irs_user)
        .map(|((fb, a), beta)| {
            let (wl, wn) = rician_weights(*beta);
            let amp = a.sqrt();
            fb.scale(amp * wl) + complex_gaussian(fb.nrows(), 1, rng).scale(amp * wn)
        })
        .collect();
    Ok(ChannelRealization {
        g,
        f,
        los: los.clone(),
        pathloss_ap_irs,
        pathloss_user: pathloss_user.to_vec(),
    })
}

/// Effective MISO channel `f^H Φ G` (1 x M).
pub fn effective_miso(f: &ComplexMatrix, phases: &PhaseConfig, g: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = g.nrows();
    if f.nrows() != n || f.ncols() != 1 || phases.len() != n {
        return Err(Error::Dimension(format!(
            "f is {}x{}, Φ has {} entries, G is {}x{}",
            f.nrows(),
            f.ncols(),
            phases.len(),
            n,
            g.ncols()
        )));
    }
    let c = phases.coefficients();
    let mut row = ComplexMatrix::zeros(1, g.ncols());
    for i in 0..n {
        let w = f[(i, 0)].conj() * c[i];
        for j in 0..g.ncols() {
            row[(0, j)] += w * g[(i, j)];
        }
    }
    Ok(row)
}

/// Cascaded channel `diag(conj(f)) G` (N x M), so that
/// `c^T · cascaded(f, G) = f^H Φ G`.
pub fn cascaded_los(f_bar: &ComplexMatrix, g_bar: &ComplexMatrix) -> Result<ComplexMatrix> {
    if f_bar.nrows() != g_bar.nrows() || f_bar.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "f is {}x{}, G has {} rows",
            f_bar.nrows(),
            f_bar.ncols(),
            g_bar.nrows()
        )));
    }
    let mut out = g_bar.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= f_bar[(i, 0)].conj();
    }
    Ok(out)
}

/// Channel-estimation error model: NMSE `ϱ = E‖Δh‖² / E‖h‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationModel {
    pub nmse: f64,
}

/// Returns `h + Δh` with Δh entries i.i.d. CN(0, ϱ·ref_power/len(h)).
pub fn apply_ce_error<R: Rng + ?Sized>(
    h: &ComplexMatrix,
    model: &EstimationModel,
    ref_power: f64,
    rng: &mut R,
) -> ComplexMatrix {
    if model.nmse == 0.0 {
        return h.clone();
    }
    let std = (model.nmse * ref_power / h.len() as f64).sqrt();
    h + complex_gaussian(h.nrows(), h.ncols(), rng).scale(std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests_support::reference_geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_geometry(ny: usize, nz: usize, m: usize) -> SystemGeometry {
        SystemGeometry { irs_cols: ny, irs_rows: nz, num_ap_antennas: m, ..reference_geometry() }
    }

    fn random_phases(n: usize, rng: &mut ChaCha8Rng) -> PhaseConfig {
        PhaseConfig::new((0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect()).unwrap()
    }

    #[test]
    fn steering_leading_entry_and_broadside() {
        let a = steering_ap(0.3, 0.8, 5, 0.5, 1.0);
        assert_eq!(a[(0, 0)], C64::new(1.0, 0.0));
        let b = steering_ap(0.0, 0.8, 5, 0.5, 1.0);
        assert!(b.iter().all(|z| *z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn steering_half_wavelength_values() {
        let a = steering_ap(1.0, 1.0, 2, 0.5, 1.0);
        assert!((a[(1, 0)] - C64::new(-1.0, 0.0)).norm() < 1e-12);
        let y = steering_irs(1.0, 0.5, 2, 0.5, 1.0);
        assert!((y[(1, 0)] - C64::new(0.0, -1.0)).norm() < 1e-12);
        assert_eq!(steering_irs(0.7, 0.2, 1, 0.5, 1.0)[(0, 0)], C64::new(1.0, 0.0));
    }

    #[test]
    fn los_ap_irs_structure() {
        let mut g = small_geometry(2, 2, 2);
        let gb = los_ap_irs(&g).unwrap();
        assert_eq!(gb.shape(), (4, 2));
        assert_eq!(gb[(0, 0)], C64::new(1.0, 0.0));
        let svd = gb.clone().svd(false, false);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(s[1] < 1e-10 * s[0], "{s:?}");

        // zero angles (AP and IRS at equal height) collapse every argument
        g.ap_location.z = g.irs_location.z;
        let ones = los_ap_irs(&g).unwrap();
        assert!(ones.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn los_irs_user_properties() {
        let g = small_geometry(3, 2, 2);
        // cos ξ = 0 for a user at the IRS's y coordinate: the y steering is flat,
        // so the Kronecker product repeats the z steering vector.
        let f = los_irs_user(&g, &Vec3::new(3.0, 50.0, 0.0)).unwrap();
        for iy in 0..3 {
            for iz in 0..2 {
                assert!((f[(iy * 2 + iz, 0)] - f[(iz, 0)]).norm() < 1e-15);
            }
        }
        assert!(f.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let energy = (f.adjoint() * &f)[(0, 0)];
        assert!((energy.re - 6.0).abs() < 1e-12 && energy.im.abs() < 1e-12);
    }

    #[test]
    fn path_loss_law() {
        assert!((path_loss(1.0, 2.2, 1e-3, 1.0).unwrap() - 1e-3).abs() < 1e-18);
        let d = 2529f64.sqrt();
        let a = path_loss(d, 2.2, 1e-3, 1.0).unwrap();
        assert!((a - 1e-3 * d.powf(-2.2)).abs() < 1e-20);
        assert!((a / 1.81e-7 - 1.0).abs() < 5e-3, "{a}");
        let a1 = path_loss(10.0, 2.0, 1e-3, 1.0).unwrap();
        let a2 = path_loss(20.0, 2.0, 1e-3, 1.0).unwrap();
        assert!((a1 / a2 - 4.0).abs() < 1e-12);
        assert!(path_loss(0.0, 2.0, 1e-3, 1.0).is_err());
        assert!(path_loss(-1.0, 2.0, 1e-3, 1.0).is_err());
    }

    fn fixture_params(beta: f64, k: usize) -> RicianParams {
        RicianParams {
            rician_ap_irs: beta,
            rician_irs_user: vec![beta; k],
            pathloss_exponent_ap_irs: 2.2,
            pathloss_exponent_user: 2.8,
            ref_pathloss: 1e-3,
            ref_distance: 1.0,
        }
    }

    #[test]
    fn pure_los_limit() {
        let g = small_geometry(2, 2, 2);
        let los = LosChannels::assemble(&g, &[Vec3::new(4.0, 55.0, 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = sample_channels(&los, &fixture_params(f64::INFINITY, 1), 4.0, &[9.0], &mut rng).unwrap();
        assert!((ch.g.clone() - los.g_bar.scale(2.0)).norm() < 1e-15);
        assert!((ch.f[0].clone() - los.f_bar[0].scale(3.0)).norm() < 1e-15);
    }

    #[test]
    fn rician_mixing_conserves_power() {
        // Per-entry second moment equals the path loss for any β (Monte Carlo, 2%).
        let g = small_geometry(1, 1, 1);
        let los = LosChannels::assemble(&g, &[Vec3::new(4.0, 55.0, 0.0)]).unwrap();
        for beta in [0.0, 10f64.powf(0.2), 10.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let n = 100_000;
            let (mut pg, mut pf) = (0.0, 0.0);
            for _ in 0..n {
                let ch = sample_channels(&los, &fixture_params(beta, 1), 2.0, &[0.5], &mut rng).unwrap();
                pg += ch.g[(0, 0)].norm_sqr();
                pf += ch.f[0][(0, 0)].norm_sqr();
            }
            assert!((pg / n as f64 / 2.0 - 1.0).abs() < 0.02, "beta {beta}: {}", pg / n as f64);
            assert!((pf / n as f64 / 0.5 - 1.0).abs() < 0.02, "beta {beta}: {}", pf / n as f64);
        }
    }

    #[test]
    fn effective_miso_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let m = rng.random_range(1..6);
            let f = complex_gaussian(n, 1, &mut rng);
            let g = complex_gaussian(n, m, &mut rng);
            let phases = random_phases(n, &mut rng);
            let direct = effective_miso(&f, &phases, &g).unwrap();
            let c = ComplexMatrix::from_column_slice(n, 1, &phases.coefficients());
            let fh_diag = ComplexMatrix::from_diagonal(&f.adjoint().transpose().column(0).into_owned());
            let via_diag = c.transpose() * fh_diag * &g;
            let via_cascade = c.transpose() * cascaded_los(&f, &g).unwrap();
            assert!((&direct - &via_diag).norm() <= 1e-12 * direct.norm().max(1e-300));
            assert!((&direct - &via_cascade).norm() <= 1e-12 * direct.norm().max(1e-300));
        }
    }

    #[test]
    fn effective_miso_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = complex_gaussian(4, 3, &mut rng);
        let ones = ComplexMatrix::from_element(4, 1, C64::new(1.0, 0.0));
        let h = effective_miso(&ones, &PhaseConfig::zeros(4), &g).unwrap();
        for j in 0..3 {
            let colsum: C64 = g.column(j).iter().sum();
            assert!((h[(0, j)] - colsum).norm() < 1e-14);
        }
        let f = complex_gaussian(1, 1, &mut rng);
        let g1 = complex_gaussian(1, 2, &mut rng);
        let p = PhaseConfig::new(vec![0.7]).unwrap();
        let h = effective_miso(&f, &p, &g1).unwrap();
        let s = f[(0, 0)].conj() * C64::from_polar(1.0, 0.7);
        for j in 0..2 {
            assert!((h[(0, j)] - s * g1[(0, j)]).norm() < 1e-15);
        }
        assert!(effective_miso(&f, &p, &g).is_err());
    }

    #[test]
    fn cascaded_los_properties() {
        let g = small_geometry(2, 3, 2);
        let gb = los_ap_irs(&g).unwrap();
        let fb = los_irs_user(&g, &Vec3::new(5.0, 58.0, 0.0)).unwrap();
        let ones = ComplexMatrix::from_element(6, 1, C64::new(1.0, 0.0));
        assert_eq!(cascaded_los(&ones, &gb).unwrap(), gb);
        let hc = cascaded_los(&fb, &gb).unwrap();
        assert!(hc.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_phases(6, &mut rng);
        let c = ComplexMatrix::from_column_slice(6, 1, &p.coefficients());
        let lhs = c.transpose() * hc;
        let rhs = effective_miso(&fb, &p, &gb).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn ce_error_zero_nmse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = complex_gaussian(4, 1, &mut rng);
        assert_eq!(apply_ce_error(&h, &EstimationModel { nmse: 0.0 }, 1.0, &mut rng), h);
    }

    #[test]
    fn ce_error_hits_configured_nmse_and_is_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = EstimationModel { nmse: 0.1 };
        let m = 4;
        let draws = 100_000;
        let ref_power = 2.5;
        let (mut err, mut cross) = (0.0, C64::new(0.0, 0.0));
        for _ in 0..draws {
            let h = complex_gaussian(m, 1, &mut rng).scale((ref_power / m as f64).sqrt());
            let hh = apply_ce_error(&h, &model, ref_power, &mut rng);
            let d = &hh - &h;
            err += d.norm_squared();
            cross += (h.adjoint() * &d)[(0, 0)];
        }
        let nmse = err / draws as f64 / ref_power;
        assert!((nmse / 0.1 - 1.0).abs() < 0.02, "{nmse}");
        // E[h^H Δh] = 0; its sample std is about sqrt(ref * 0.1 * ref / m ... ) / sqrt(draws)
        let mean_cross = cross / draws as f64;
        assert!(mean_cross.norm() < 0.01, "{mean_cross}");
    }

    #[test]
    fn steering_entries_unit_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let v = steering_vector(8, rng.random_range(0.1..1.0), 1.0, rng.random_range(-1.0..1.0));
            assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }
}
