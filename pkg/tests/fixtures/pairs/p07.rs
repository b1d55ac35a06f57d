pub fn vowel_count(label: &str) -> i32 {
    let mut n = 0;
    for c in label.bytes() {
        if c == b'a' || c == b'e' || c == b'i' || c == b'o' || c == b'u' {
            n += 1;
        }
    }
    n
}
