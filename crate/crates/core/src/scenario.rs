//! A complete simulation scenario (geometry, mobility, channel statistics,
//! link budget) and the per-slot channel realizations derived from it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{path_loss, sample_channels, ChannelRealization, LosChannels, RicianParams};
use crate::geometry::{
    distance_ap_irs, distance_irs_user, sample_in_area, simulate_trajectory, MobilityParams, SystemGeometry,
    UserTrajectory, Vec3,
};
use crate::metrics::LinkBudget;
use crate::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// Everything needed to simulate one system, in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: SystemGeometry,
    pub mobility: MobilityParams,
    pub channel: RicianParams,
    pub num_users: usize,
    /// Transmit power budget P in watts.
    pub power: f64,
    /// Receiver noise power σ² in watts (same for all users).
    pub noise_power: f64,
    pub weights: Vec<f64>,
    /// Opposite corners of the rectangular service area in the ground plane.
    pub area_min: [f64; 2],
    pub area_max: [f64; 2],
    pub carrier_freq: f64,
    pub symbol_duration: f64,
}

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Converts km/h to m/s.
pub fn kmh_to_ms(v: f64) -> f64 {
    v / 3.6
}

impl Scenario {
    /// Full-size system: M = 6 antennas, a 10 x 10 IRS, K = 3 users, 900 MHz.
    pub fn full() -> Self {
        Self::with_dimensions(6, 10, 10, 3)
    }

    /// Reduced system for desktop runs: M = 4 antennas, a 4 x 4 IRS, K = 3 users.
    pub fn desk() -> Self {
        Self::with_dimensions(4, 4, 4, 3)
    }

    /// Default physical parameters with the given array sizes.
    pub fn with_dimensions(m: usize, irs_rows: usize, irs_cols: usize, k: usize) -> Self {
        let carrier_freq = 900e6;
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        let beta = db_to_linear(2.0);
        Self {
            geometry: SystemGeometry {
                ap_location: Vec3::new(2.0, 0.0, 20.0),
                irs_location: Vec3::new(0.0, 50.0, 25.0),
                num_ap_antennas: m,
                irs_rows,
                irs_cols,
                wavelength,
                spacing_ap: wavelength / 2.0,
                spacing_irs_y: wavelength / 2.0,
                spacing_irs_z: wavelength / 2.0,
            },
            mobility: MobilityParams {
                speed_min: 8.0,
                speed_max: 10.0,
                heading_min: -std::f64::consts::PI / 18.0,
                heading_max: std::f64::consts::PI / 18.0,
                slot_duration: 0.02,
                noise_std: 0.1,
            },
            channel: RicianParams {
                rician_ap_irs: beta,
                rician_irs_user: vec![beta; k],
                pathloss_exponent_ap_irs: 2.2,
                pathloss_exponent_user: 2.8,
                ref_pathloss: db_to_linear(-30.0),
                ref_distance: 1.0,
            },
            num_users: k,
            power: dbm_to_watts(30.0),
            noise_power: dbm_to_watts(-80.0),
            weights: vec![1.0; k],
            area_min: [3.0, 50.0],
            area_max: [6.0, 60.0],
            carrier_freq,
            symbol_duration: 66.7e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.mobility.validate()?;
        self.channel.validate()?;
        if self.num_users == 0 {
            return Err(Error::InvalidParameter("need at least one user".into()));
        }
        if self.weights.len() != self.num_users || self.channel.rician_irs_user.len() != self.num_users {
            return Err(Error::Dimension("per-user weights and Rician factors must have K entries".into()));
        }
        if !(self.power > 0.0 && self.noise_power > 0.0 && self.carrier_freq > 0.0 && self.symbol_duration > 0.0) {
            return Err(Error::InvalidParameter("power, noise, carrier and symbol duration must be positive".into()));
        }
        if self.area_min[0] > self.area_max[0] || self.area_min[1] > self.area_max[1] {
            return Err(Error::InvalidParameter("service-area corners out of order".into()));
        }
        distance_ap_irs(&self.geometry)?;
        Ok(())
    }

    pub fn budget(&self) -> LinkBudget {
        LinkBudget { noise_power: vec![self.noise_power; self.num_users], weights: self.weights.clone() }
    }

    /// Copy with a different user count; per-user vectors repeat the first entry.
    pub fn with_users(&self, k: usize) -> Self {
        let mut s = self.clone();
        s.num_users = k;
        s.weights = vec![self.weights[0]; k];
        s.channel.rician_irs_user = vec![self.channel.rician_irs_user[0]; k];
        s
    }

    /// Copy with all Rician factors set to `beta` (linear).
    pub fn with_rician(&self, beta: f64) -> Self {
        let mut s = self.clone();
        s.channel.rician_ap_irs = beta;
        s.channel.rician_irs_user = vec![beta; self.num_users];
        s
    }

    /// Copy whose users all move at exactly `speed` m/s.
    pub fn with_speed(&self, speed: f64) -> Self {
        let mut s = self.clone();
        s.mobility.speed_min = speed;
        s.mobility.speed_max = speed;
        s
    }

    /// Draws start positions in the service area and moves every user for
    /// `slots` slots (the returned trajectories hold `slots` locations).
    pub fn sample_episode<R: Rng + ?Sized>(&self, slots: usize, rng: &mut R) -> Episode {
        let trajectories = (0..self.num_users)
            .map(|k| {
                let start = sample_in_area(self.area_min, self.area_max, rng);
                simulate_trajectory(k, start, &self.mobility, slots, rng)
            })
            .collect();
        Episode { trajectories }
    }

    /// Same draws as [`Scenario::sample_episode`], but every trajectory is
    /// shifted in the ground plane so that its *last* slot sits at the drawn
    /// position. The served users are then uniform over the service area
    /// whatever the speed, and only the history depends on the mobility.
    pub fn sample_episode_anchored<R: Rng + ?Sized>(&self, slots: usize, rng: &mut R) -> Episode {
        let mut episode = self.sample_episode(slots, rng);
        for tr in &mut episode.trajectories {
            let anchor = tr.locations[0];
            let last = *tr.locations.last().expect("at least one slot");
            for loc in &mut tr.locations {
                *loc = Vec3::new(anchor.x - (last.x - loc.x), anchor.y - (last.y - loc.y), loc.z);
            }
        }
        episode
    }

    /// LoS channels and path losses for users at the given locations.
    pub fn los_state(&self, users: &[Vec3]) -> Result<LosState> {
        let los = LosChannels::assemble(&self.geometry, users)?;
        let ch = &self.channel;
        let pathloss_ap_irs = path_loss(
            distance_ap_irs(&self.geometry)?,
            ch.pathloss_exponent_ap_irs,
            ch.ref_pathloss,
            ch.ref_distance,
        )?;
        let pathloss_user = users
            .iter()
            .map(|u| {
                path_loss(distance_irs_user(&self.geometry, u), ch.pathloss_exponent_user, ch.ref_pathloss, ch.ref_distance)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LosState { los, pathloss_ap_irs, pathloss_user })
    }

    /// One Rician realization for users at the given locations.
    pub fn realize<R: Rng + ?Sized>(&self, users: &[Vec3], rng: &mut R) -> Result<ChannelRealization> {
        let s = self.los_state(users)?;
        sample_channels(&s.los, &self.channel, s.pathloss_ap_irs, &s.pathloss_user, rng)
    }
}

/// Deterministic (LoS) part of the channel at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LosState {
    pub los: LosChannels,
    pub pathloss_ap_irs: f64,
    pub pathloss_user: Vec<f64>,
}

/// Trajectories of all users over a common window of slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectories: Vec<UserTrajectory>,
}

impl Episode {
    pub fn num_slots(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.locations.len())
    }

    /// Locations of all users at slot `t`.
    pub fn locations_at(&self, t: usize) -> Vec<Vec3> {
        self.trajectories.iter().map(|tr| tr.locations[t]).collect()
    }
}
