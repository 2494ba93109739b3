#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lmn {

// Worker cap for the OpenMP kernels. Every parallel loop in this codebase
// writes to disjoint output slots (or reduces integers), so results are
// identical for any thread count; this only trades wall time.
inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
  if (n < 1) n = 1;
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace lmn
