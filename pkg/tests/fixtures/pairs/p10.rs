pub fn quant_bucket(norm: f32) -> u8 {
    if !(norm >= 0.0) {
        return 0;
    }
    let n = if norm > 1.0 { 1.0 } else { norm };
    (n * 255.0) as u8
}
