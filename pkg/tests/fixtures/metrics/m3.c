int min2(int a, int b) { return a < b ? a : b; }

int clamp3(int x) {
    if (x < 0 || x > 100) {
        while (x > 100) {
            x -= 100;
        }
        if (x < 0) x = 0;
    }
    return x;
}
