# Benchmarks: PPV vs trie timings and sampling quality sweeps
