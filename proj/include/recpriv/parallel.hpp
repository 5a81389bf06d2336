#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace recpriv::par {

/// 0 means "use the OpenMP default".
void set_num_threads(int n);
int num_threads();

/// Runs f(i) for i in [0, n). Every parallel kernel in this library writes
/// per-index slots and leaves reductions to a serial pass, so the parallel
/// and serial paths produce bitwise-identical results; `serial` switches to
/// the plain loop (the reference path used by tests and the benchmark).
template <typename F>
void for_each_index(std::size_t n, F&& f, bool serial = false) {
#ifdef _OPENMP
  if (!serial && n > 1) {
    const int threads = num_threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads > 0 ? threads : omp_get_max_threads())
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      f(static_cast<std::size_t>(i));
    }
    return;
  }
#else
  (void)serial;
#endif
  for (std::size_t i = 0; i < n; ++i) f(i);
}

}  // namespace recpriv::par
