pub fn damp_mid(a: f64, b: f64) -> f64 {
    let mut m = (a + b) * 0.5;
    if m > 50.0 {
        m = 50.0 + (m - 50.0) * 0.25;
    }
    m
}
