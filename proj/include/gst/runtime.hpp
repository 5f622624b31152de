#pragma once

namespace gst {

/// Keeps freed tape buffers in the heap instead of returning them to the OS.
/// Every training step and resample allocates and frees the same multi-MB
/// gradient buffers, and glibc would otherwise mmap/munmap them each time.
/// No-op on other C libraries.
void keep_large_allocations();

}  // namespace gst
