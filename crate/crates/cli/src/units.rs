//! Output units. Everything inside the library is SI; reports show
//! distances in centimeters and angles in degrees.

use dynba::simulation::Stat;

pub const CM_PER_M: f64 = 100.0;

/// The one meters-to-centimeters conversion used by every report.
pub fn cm(meters: f64) -> f64 {
    meters * CM_PER_M
}

/// Mean and standard deviation scale with the unit.
pub fn cm_stat(s: Stat) -> Stat {
    Stat { mean: cm(s.mean), std: cm(s.std), n: s.n }
}

/// Nine significant digits, locale independent.
pub fn num(x: f64) -> String {
    dynba::numfmt::sig(x, 9)
}
