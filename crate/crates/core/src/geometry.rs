//! Deployment geometry, link angles and the random-walk mobility model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point in the global Cartesian frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

/// Static placement of the AP (uniform linear array) and the IRS (uniform
/// planar array with `irs_cols` elements along y and `irs_rows` along z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    pub ap_location: Vec3,
    pub irs_location: Vec3,
    pub num_ap_antennas: usize,
    /// Elements along the z axis (N_z).
    pub irs_rows: usize,
    /// Elements along the y axis (N_y).
    pub irs_cols: usize,
    pub wavelength: f64,
    pub spacing_ap: f64,
    pub spacing_irs_y: f64,
    pub spacing_irs_z: f64,
}

impl SystemGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.num_ap_antennas == 0 || self.irs_rows == 0 || self.irs_cols == 0 {
            return Err(Error::InvalidParameter("array sizes must be at least 1".into()));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::InvalidParameter("wavelength must be positive".into()));
        }
        if !(self.spacing_ap > 0.0 && self.spacing_irs_y > 0.0 && self.spacing_irs_z > 0.0) {
            return Err(Error::InvalidParameter("element spacings must be positive".into()));
        }
        if !self.ap_location.is_finite() || !self.irs_location.is_finite() {
            return Err(Error::InvalidParameter("locations must be finite".into()));
        }
        Ok(())
    }

    /// Total number of IRS elements N = N_y * N_z.
    pub fn num_irs_elements(&self) -> usize {
        self.irs_rows * self.irs_cols
    }
}

/// Link angles as the three ratios used by the steering vectors:
/// `sin θ`, `cos ξ` and `sin ξ`.
///
/// These are projection ratios and need not satisfy `cos² ξ + sin² ξ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkAngles {
    pub sin_theta: f64,
    pub cos_xi: f64,
    pub sin_xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub speed_min: f64,
    pub speed_max: f64,
    pub heading_min: f64,
    pub heading_max: f64,
    pub slot_duration: f64,
    pub noise_std: f64,
}

impl MobilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_min <= self.speed_max) || self.speed_min < 0.0 {
            return Err(Error::InvalidParameter("need 0 <= speed_min <= speed_max".into()));
        }
        if !(self.heading_min <= self.heading_max) {
            return Err(Error::InvalidParameter("need heading_min <= heading_max".into()));
        }
        if !(self.slot_duration > 0.0) {
            return Err(Error::InvalidParameter("slot duration must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter("noise std must be non-negative".into()));
        }
        Ok(())
    }

    /// Mean speed of the uniform speed distribution.
    pub fn mean_speed(&self) -> f64 {
        0.5 * (self.speed_min + self.speed_max)
    }
}

/// Realized per-slot locations of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrajectory {
    pub user_index: usize,
    pub locations: Vec<Vec3>,
}

pub fn distance_ap_irs(geom: &SystemGeometry) -> Result<f64> {
    let d = geom.ap_location.distance(&geom.irs_location);
    if d == 0.0 {
        return Err(Error::DegenerateGeometry("AP and IRS are co-located".into()));
    }
    Ok(d)
}

/// IRS-to-user distance. For a user on the ground this is
/// `sqrt((x_I - x_k)^2 + (y_I - y_k)^2 + h_I^2)`; a realized location with a
/// nonzero height offset uses the actual vertical separation.
pub fn distance_irs_user(geom: &SystemGeometry, user: &Vec3) -> f64 {
    geom.irs_location.distance(user)
}

pub fn angles_ap_irs(geom: &SystemGeometry) -> Result<LinkAngles> {
    let d = distance_ap_irs(geom)?;
    let (ap, irs) = (&geom.ap_location, &geom.irs_location);
    Ok(LinkAngles {
        sin_theta: (irs.z - ap.z).abs() / d,
        cos_xi: irs.y.abs() / d,
        sin_xi: ap.x.abs() / d,
    })
}

pub fn angles_irs_user(geom: &SystemGeometry, user: &Vec3) -> Result<LinkAngles> {
    let d = distance_irs_user(geom, user);
    if d == 0.0 {
        return Err(Error::DegenerateGeometry("user located at the IRS".into()));
    }
    let irs = &geom.irs_location;
    Ok(LinkAngles {
        sin_theta: (irs.z - user.z).abs() / d,
        cos_xi: (user.y - irs.y).abs() / d,
        sin_xi: user.x.abs() / d,
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One step of the kinematic model `L_{t+1} = L_t + v ΔT + u`.
///
/// Speed and heading are drawn uniformly; the heading is measured from the
/// +x axis in the ground plane. Measurement noise is applied on all axes.
pub fn advance_mobility<R: Rng + ?Sized>(loc: Vec3, params: &MobilityParams, rng: &mut R) -> Vec3 {
    let speed = uniform(rng, params.speed_min, params.speed_max);
    let heading = uniform(rng, params.heading_min, params.heading_max);
    let step = Vec3::new(
        speed * heading.cos() * params.slot_duration,
        speed * heading.sin() * params.slot_duration,
        0.0,
    );
    let noise = if params.noise_std > 0.0 {
        let n = Normal::new(0.0, params.noise_std).expect("validated noise std");
        Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    } else {
        Vec3::default()
    };
    loc + step + noise
}

/// Runs the mobility model for `slots` slots starting at `start` (slot 0).
pub fn simulate_trajectory<R: Rng + ?Sized>(
    user_index: usize,
    start: Vec3,
    params: &MobilityParams,
    slots: usize,
    rng: &mut R,
) -> UserTrajectory {
    let mut locations = Vec::with_capacity(slots.max(1));
    locations.push(start);
    while locations.len() < slots {
        let last = *locations.last().unwrap();
        locations.push(advance_mobility(last, params, rng));
    }
    UserTrajectory { user_index, locations }
}

/// Uniform draw from the axis-aligned ground rectangle spanned by `a` and `b`.
pub fn sample_in_area<R: Rng + ?Sized>(a: [f64; 2], b: [f64; 2], rng: &mut R) -> Vec3 {
    let (x0, x1) = (a[0].min(b[0]), a[0].max(b[0]));
    let (y0, y1) = (a[1].min(b[1]), a[1].max(b[1]));
    Vec3::new(uniform(rng, x0, x1), uniform(rng, y0, y1), 0.0)
}
