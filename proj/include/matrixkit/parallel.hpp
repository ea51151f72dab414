#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace matrixkit {

// Global worker-thread count. 0 = use MATRIXKIT_THREADS env or all cores.
void set_threads(int n);
int effective_threads();

// Static-schedule parallel loop. Every iteration writes disjoint outputs, so
// results are bit-identical for any thread count.
template <class F>
void parallel_for(std::int64_t n, F&& body) {
#ifdef _OPENMP
  const int nt = effective_threads();
  if (nt > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace matrixkit
