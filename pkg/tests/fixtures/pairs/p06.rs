pub fn tally_sum(slots: &mut [i32; 4]) -> i32 {
    let mut t: i32 = 0;
    for i in 0..4 {
        t = t.wrapping_add(slots[i]);
    }
    t
}
