#include <benchmark/benchmark.h>

// The packaged benchmark_main archive is LTO bytecode from another compiler
// release, so the entry point is built here against the shared library.
BENCHMARK_MAIN();
