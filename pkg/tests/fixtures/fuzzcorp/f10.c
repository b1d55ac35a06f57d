#include <ctype.h>

/* length of the numeric suffix in a code like AB123 */
int suffix_digits(const char *code) {
    int len = 0;
    while (code[len] != 0) {
        len++;
    }
    int n = 0;
    while (n < len && isdigit((unsigned char)code[len - 1 - n])) {
        n++;
    }
    return n;
}
