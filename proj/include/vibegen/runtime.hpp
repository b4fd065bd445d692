#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vibegen {

/// Keeps large tensor buffers on the heap between layers. By default glibc
/// maps each multi-megabyte block fresh from the kernel and pays a page fault
/// per 4 KiB on first touch, which costs more than the layer arithmetic.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
#endif
}

}  // namespace vibegen
