/* round down to a 64-wide block boundary */
unsigned int block_floor(unsigned int v) {
    return v - (v % 64u);
}

/* free slots left in the final block */
unsigned int block_slack(unsigned int v) {
    unsigned int used = v % 64u;
    if (used == 0u) {
        return 0u;
    }
    return 64u - used;
}
