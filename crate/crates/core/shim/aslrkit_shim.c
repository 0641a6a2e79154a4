/* Tiny library loaded at runtime so the collector has a small image to locate. */
int aslrkit_shim_marker(int x) { return x + 1; }
