//! Float serialization shared by every CSV and SVG writer: nine significant
//! digits, scientific notation, so outputs are byte-stable across runs.

pub fn sig9(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.8e}")
    }
}
