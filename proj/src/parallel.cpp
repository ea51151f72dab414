#include "matrixkit/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace matrixkit {

namespace {
std::atomic<int> g_threads{0};
}

void set_threads(int n) { g_threads.store(n < 0 ? 0 : n); }

int effective_threads() {
  // MATRIXKIT_THREADS overrides any --threads flag.
  if (const char* env = std::getenv("MATRIXKIT_THREADS")) {
    const int e = std::atoi(env);
    if (e > 0) return e;
  }
  const int n = g_threads.load();
  if (n > 0) return n;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace matrixkit
