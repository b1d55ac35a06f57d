pub fn block_floor(v: u32) -> u32 {
    v - (v % 64)
}

pub fn block_slack(v: u32) -> u32 {
    let used = v % 64;
    if used == 0 {
        return 0;
    }
    64 - used
}
