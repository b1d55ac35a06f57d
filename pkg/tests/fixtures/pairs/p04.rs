pub fn letter_class(c: i8) -> i8 {
    if c >= b'a' as i8 && c <= b'z' as i8 {
        return b'L' as i8;
    }
    if c >= b'A' as i8 && c <= b'Z' as i8 {
        return b'U' as i8;
    }
    b'.' as i8
}
