/// Decimal with 17 significant digits; parses back to the identical `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
