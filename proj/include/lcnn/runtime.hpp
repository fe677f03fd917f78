#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lcnn {

/// Activation tensors of the full model are tens of megabytes. glibc serves
/// such blocks with mmap and unmaps them on free, so every layer call would
/// page-fault its output in again. Raising the thresholds keeps them in the heap.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
#endif
}

}  // namespace lcnn
