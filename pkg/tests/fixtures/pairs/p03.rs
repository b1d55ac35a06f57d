pub fn gate(enable: bool, level: i32) -> bool {
    if !enable {
        return false;
    }
    level > 10
}
