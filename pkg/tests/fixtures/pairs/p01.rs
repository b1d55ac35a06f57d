pub fn mix_add(a: i32, b: i32) -> i32 {
    let mut s = a.wrapping_add(b);
    if s < 0 {
        s += 1;
    }
    s
}
