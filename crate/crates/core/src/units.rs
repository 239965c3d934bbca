//! Unit conversions between the cyclic units used at the API surface and the
//! angular units used inside operators.

use std::f64::consts::TAU;

/// rad/ns per MHz.
pub const MHZ: f64 = TAU * 1e-3;

/// rad/ns per GHz.
pub const GHZ: f64 = TAU;

/// Angular frequency (rad/ns) of a cyclic rate given in MHz.
#[inline]
pub fn mhz_to_angular(mhz: f64) -> f64 {
    mhz * MHZ
}

/// Cyclic rate in MHz of an angular frequency in rad/ns.
#[inline]
pub fn angular_to_mhz(rad_per_ns: f64) -> f64 {
    rad_per_ns / MHZ
}

/// Wrap an angle into (−π, π].
pub fn wrap_phase(phase: f64) -> f64 {
    use std::f64::consts::PI;
    let mut p = phase.rem_euclid(TAU);
    if p > PI {
        p -= TAU;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_phase(0.0), 0.0);
    }

    #[test]
    fn mhz_round_trip() {
        assert!((angular_to_mhz(mhz_to_angular(3.8)) - 3.8).abs() < 1e-14);
    }
}
