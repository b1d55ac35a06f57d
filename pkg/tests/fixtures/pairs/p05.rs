pub fn scale_cell(cell: &mut i32, factor: i32) -> i32 {
    let old = *cell;
    *cell = old.wrapping_mul(factor);
    old
}
