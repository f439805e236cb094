#pragma once

namespace xrdattn {

/// Keeps large buffers on the heap between training steps instead of
/// returning them to the OS (glibc only; no-op elsewhere). Call once from main.
void tune_allocator();

/// Worker cap from XRDATTN_THREADS, else hardware concurrency (at least 1).
unsigned worker_count();

}  // namespace xrdattn
