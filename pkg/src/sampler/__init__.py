# DISC sampling and the constrained-decoding baseline
