//! Network configuration, node placement and link geometry.
//!
//! Axis convention: `z` is height, azimuth is measured in the x–y plane from
//! `+x`, elevation is measured from `+z`.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Substream};
use crate::units;

pub type Position = [f64; 3];

/// Every tunable of a simulated network. Power and noise values are kept in
/// the units they are usually quoted in (dBm, dBm/Hz); the accessor methods
/// return linear Watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_bs_antennas: usize,
    pub num_ir_elements: usize,
    pub num_ues: usize,
    /// Hz.
    pub bandwidth: f64,
    /// Hz.
    pub carrier_freq: f64,
    /// dBm/Hz.
    pub noise_psd_ue: f64,
    /// dBm/Hz.
    pub noise_psd_bs: f64,
    /// dBm.
    pub bs_power_max: f64,
    /// dBm.
    pub ue_pilot_power: f64,
    /// Seconds.
    pub slot_duration: f64,
    pub slots_per_interval: usize,
    /// Seconds per pilot sub-phase.
    pub pilot_subphase: f64,
    /// Seconds.
    pub processing_time: f64,
    pub discount: f64,
    pub num_quantiles: usize,
    /// Watts. `None` calibrates the threshold from the receiver noise.
    pub deviation_threshold: Option<f64>,
    pub reduced_action_count: usize,
    /// dB.
    pub shadowing_sigma_los: f64,
    /// dB.
    pub shadowing_sigma_nlos: f64,
    pub bs_position: Position,
    pub ir_position: Position,
    /// Mean of the UE (x, y) placement.
    pub ue_center: [f64; 2],
    /// Per-axis variance of the UE placement, m².
    pub ue_variance: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_bs_antennas: 16,
            num_ir_elements: 16,
            num_ues: 4,
            bandwidth: 2e6,
            carrier_freq: 30e9,
            noise_psd_ue: -174.0,
            noise_psd_bs: -170.0,
            bs_power_max: 40.0,
            ue_pilot_power: 10.0,
            slot_duration: 0.1,
            slots_per_interval: 10,
            pilot_subphase: 0.001,
            processing_time: 0.0,
            discount: 0.9,
            num_quantiles: 40,
            deviation_threshold: None,
            reduced_action_count: 60,
            shadowing_sigma_los: 3.762,
            shadowing_sigma_nlos: 8.092,
            bs_position: [0.0, 0.0, 25.0],
            ir_position: [0.0, 20.0, 30.0],
            ue_center: [0.0, 20.0],
            ue_variance: 5.0,
        }
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

impl NetworkConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bs_antennas == 0 || exact_sqrt(self.num_bs_antennas).is_none() {
            return Err(Error::Config(format!("num_bs_antennas = {} is not a positive square", self.num_bs_antennas)));
        }
        if self.num_ir_elements == 0 || exact_sqrt(self.num_ir_elements).is_none() {
            return Err(Error::Config(format!("num_ir_elements = {} is not a positive square", self.num_ir_elements)));
        }
        if self.num_ues == 0 {
            return Err(Error::Config("num_ues must be positive".into()));
        }
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("carrier_freq", self.carrier_freq),
            ("slot_duration", self.slot_duration),
            ("ue_variance", self.ue_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("bs_power_max", self.bs_power_max), ("ue_pilot_power", self.ue_pilot_power)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.pilot_subphase < 0.0 || self.processing_time < 0.0 {
            return Err(Error::Config("pilot_subphase and processing_time must be nonnegative".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1), got {}", self.discount)));
        }
        if self.num_quantiles == 0 || self.slots_per_interval == 0 || self.reduced_action_count == 0 {
            return Err(Error::Config("num_quantiles, slots_per_interval and reduced_action_count must be positive".into()));
        }
        if let Some(th) = self.deviation_threshold {
            if !(th > 0.0) {
                return Err(Error::Config("deviation_threshold must be positive".into()));
            }
        }
        let overhead = self.num_ir_elements as f64 * self.pilot_subphase + self.processing_time;
        // Equality is allowed: N = 100 with τ_c = 0.01τ leaves τ_d = 0.
        if overhead > self.slot_duration * (1.0 + 1e-12) {
            return Err(Error::InvalidTiming(format!(
                "training plus processing ({overhead} s) does not fit in a slot of {} s",
                self.slot_duration
            )));
        }
        if self.shadowing_sigma_los < 0.0 || self.shadowing_sigma_nlos < 0.0 {
            return Err(Error::Config("shadowing sigmas must be nonnegative".into()));
        }
        Ok(())
    }

    /// Side length of the square BS array.
    pub fn bs_side(&self) -> usize {
        exact_sqrt(self.num_bs_antennas).expect("validated square")
    }

    /// Side length of the square IR array.
    pub fn ir_side(&self) -> usize {
        exact_sqrt(self.num_ir_elements).expect("validated square")
    }

    /// UE receiver noise power σ², Watts.
    pub fn sigma2(&self) -> f64 {
        units::noise_power_watts(self.noise_psd_ue, self.bandwidth)
    }

    /// BS receiver noise power σ_BS², Watts.
    pub fn sigma_bs2(&self) -> f64 {
        units::noise_power_watts(self.noise_psd_bs, self.bandwidth)
    }

    pub fn p_max_watts(&self) -> f64 {
        units::dbm_to_watts(self.bs_power_max)
    }

    pub fn pilot_power_watts(&self) -> f64 {
        units::dbm_to_watts(self.ue_pilot_power)
    }

    /// Coherence interval T = L·τ.
    pub fn interval(&self) -> f64 {
        self.slots_per_interval as f64 * self.slot_duration
    }

    pub fn wavelength(&self) -> f64 {
        units::wavelength(self.carrier_freq)
    }

    pub fn carrier_freq_ghz(&self) -> f64 {
        self.carrier_freq / 1e9
    }
}

/// Azimuth/elevation pair of a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn from_vector(v: [f64; 3]) -> Direction {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        Direction {
            azimuth: v[1].atan2(v[0]),
            elevation: (v[2] / r).clamp(-1.0, 1.0).acos(),
        }
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [se * ca, se * sa, ce]
    }
}

fn sub(a: Position, b: Position) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn distance(a: Position, b: Position) -> f64 {
    norm(sub(a, b))
}

/// Link geometry for one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_position: Position,
    pub ir_position: Position,
    pub ue_positions: Vec<Position>,
    /// Departure at the BS towards the IR.
    pub bs_departure: Direction,
    /// Arrival at the IR, pointing back at the BS.
    pub ir_arrival: Direction,
    /// Departure at the IR towards each UE.
    pub ue_departure: Vec<Direction>,
    /// Departure at the BS straight towards each UE (direct link).
    pub direct_departure: Vec<Direction>,
    /// ‖BS − IR‖ + ‖IR − UE_k‖.
    pub cascaded_distance: Vec<f64>,
    /// ‖BS − UE_k‖.
    pub direct_distance: Vec<f64>,
}

impl Geometry {
    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }
}

/// Draws `k` UE positions with (x, y) ~ N(center, variance·I₂) and zero
/// height. Deterministic in `seed`.
pub fn sample_ue_positions(seed: u64, k: usize, center: [f64; 2], variance: f64) -> Result<Vec<Position>> {
    if k == 0 {
        return Err(invalid("at least one UE is required"));
    }
    if !(variance >= 0.0) {
        return Err(invalid(format!("placement variance must be nonnegative, got {variance}")));
    }
    let mut rng = substream(seed, Substream::Placement);
    let sd = variance.sqrt();
    let nx = Normal::new(center[0], sd).map_err(|e| invalid(e.to_string()))?;
    let ny = Normal::new(center[1], sd).map_err(|e| invalid(e.to_string()))?;
    Ok((0..k).map(|_| [nx.sample(&mut rng), ny.sample(&mut rng), 0.0]).collect())
}

const COINCIDENT: f64 = 1e-9;

/// Converts node positions to the angle pairs and link lengths used by the
/// channel model.
pub fn derive_geometry(bs: Position, ir: Position, ues: &[Position]) -> Result<Geometry> {
    let bs_ir = sub(ir, bs);
    let d_bs_ir = norm(bs_ir);
    if d_bs_ir < COINCIDENT {
        return Err(Error::DegenerateGeometry("BS and IR coincide".into()));
    }
    let mut ue_departure = Vec::with_capacity(ues.len());
    let mut direct_departure = Vec::with_capacity(ues.len());
    let mut cascaded_distance = Vec::with_capacity(ues.len());
    let mut direct_distance = Vec::with_capacity(ues.len());
    for (k, &ue) in ues.iter().enumerate() {
        let ir_ue = sub(ue, ir);
        let d_ir_ue = norm(ir_ue);
        if d_ir_ue < COINCIDENT {
            return Err(Error::DegenerateGeometry(format!("UE {k} coincides with the IR")));
        }
        let bs_ue = sub(ue, bs);
        let d_bs_ue = norm(bs_ue);
        if d_bs_ue < COINCIDENT {
            return Err(Error::DegenerateGeometry(format!("UE {k} coincides with the BS")));
        }
        ue_departure.push(Direction::from_vector(ir_ue));
        direct_departure.push(Direction::from_vector(bs_ue));
        cascaded_distance.push(d_bs_ir + d_ir_ue);
        direct_distance.push(d_bs_ue);
    }
    Ok(Geometry {
        bs_position: bs,
        ir_position: ir,
        ue_positions: ues.to_vec(),
        bs_departure: Direction::from_vector(bs_ir),
        ir_arrival: Direction::from_vector(sub(bs, ir)),
        ue_departure,
        direct_departure,
        cascaded_distance,
        direct_distance,
    })
}

/// Places the UEs of drop `seed` and derives the geometry.
pub fn sample_geometry(cfg: &NetworkConfig, seed: u64) -> Result<Geometry> {
    let ues = sample_ue_positions(seed, cfg.num_ues, cfg.ue_center, cfg.ue_variance)?;
    derive_geometry(cfg.bs_position, cfg.ir_position, &ues)
}
