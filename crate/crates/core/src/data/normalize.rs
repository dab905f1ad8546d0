/// Standard deviations at or below this are treated as a constant series.
pub const STD_FLOOR: f64 = 1e-12;

/// `(x - mean) / std` with the population standard deviation. Constant
/// series map to all zeros.
pub fn znormalize(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= STD_FLOOR {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - mean) / std).collect()
}
