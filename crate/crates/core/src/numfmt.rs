//! Locale-independent decimal formatting with a fixed number of significant digits.

/// Formats `x` in plain decimal notation with `digits` significant digits.
///
/// Seventeen digits round-trip every finite `f64` exactly through `str::parse`.
pub fn sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci[sci.find('e').map_or(sci.len(), |i| i + 1)..].parse().unwrap_or(0);
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// Seventeen significant digits, used by the factor-graph and values formats.
pub fn exact(x: f64) -> String {
    sig(x, 17)
}
