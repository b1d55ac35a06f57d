/* quantizes a norm in [0, 1] to a byte bucket */
unsigned char quant_bucket(float norm) {
    if (!(norm >= 0.0f)) {
        return 0;
    }
    if (norm > 1.0f) {
        norm = 1.0f;
    }
    return (unsigned char)(norm * 255.0f);
}
