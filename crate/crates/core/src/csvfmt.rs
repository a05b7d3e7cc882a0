//! Number formatting shared by the CSV writers.

/// Rounds to 15 significant digits and prints the shortest representation of
/// the rounded value. Idempotent under parse/format.
pub fn time(t: f64) -> String {
    let rounded: f64 = format!("{t:.14e}").parse().unwrap_or(t);
    format!("{rounded}")
}

/// Shortest representation that parses back to the same `f64`.
pub fn value(x: f64) -> String {
    format!("{x}")
}

/// Fixed 17 significant digits, used by the model checkpoint.
pub fn exact(x: f64) -> String {
    format!("{x:.16e}")
}
