//! Decibel and power-unit conversions.
//!
//! Everything outside this module works in linear Watts and linear power
//! ratios; configuration values arrive in dB/dBm and pass through here once.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    linear_to_db(w) + 30.0
}

/// Total noise power in Watts for a density in dBm/Hz over `bandwidth_hz`.
pub fn noise_power_watts(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_watts(psd_dbm_per_hz) * bandwidth_hz
}

/// Carrier wavelength in meters.
pub fn wavelength(carrier_freq_hz: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_freq_hz
}
