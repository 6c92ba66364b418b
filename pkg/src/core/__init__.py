# Token primitives and shared errors
