/* sum of a fixed four-slot tally */
int tally_sum(int slots[4]) {
    int t = 0;
    for (int i = 0; i < 4; i++) {
        t += slots[i];
    }
    return t;
}
