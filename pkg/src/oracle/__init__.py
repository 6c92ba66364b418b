# Exact enumeration oracles and divergences
