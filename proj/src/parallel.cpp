#include "recpriv/parallel.hpp"

#include <atomic>

namespace recpriv::par {

namespace {
std::atomic<int> g_threads{0};
}

void set_num_threads(int n) { g_threads.store(n < 0 ? 0 : n); }

int num_threads() { return g_threads.load(); }

}  // namespace recpriv::par
