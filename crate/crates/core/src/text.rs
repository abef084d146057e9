/// 17 significant digits in scientific notation; parses back to the same `f64`.
pub(crate) fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}
