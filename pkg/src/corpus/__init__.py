# Constraint set ingestion, sorted index and its binary format
