#include "xrdattn/runtime.hpp"

#include <cstdlib>
#include <string>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace xrdattn {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

unsigned worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("XRDATTN_THREADS")) {
    try {
      long cap = std::stol(env);
      if (cap >= 1) return static_cast<unsigned>(cap);
    } catch (const std::exception&) {
    }
  }
  return hw;
}

}  // namespace xrdattn
