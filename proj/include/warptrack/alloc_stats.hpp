#pragma once

#include <cstdint>

namespace warptrack {

// Per-thread accounting of tensor buffer allocations. Used by tests to bound
// the working set of one head iteration (no hidden quadratic blowups).
struct AllocStats {
  int64_t live_bytes = 0;
  int64_t peak_bytes = 0;
  int64_t max_single = 0;
  int64_t alloc_count = 0;
};

namespace detail {
inline AllocStats& tls_alloc_stats() {
  thread_local AllocStats s;
  return s;
}
}  // namespace detail

inline void alloc_note_alloc(int64_t bytes) {
  AllocStats& s = detail::tls_alloc_stats();
  s.live_bytes += bytes;
  s.alloc_count += 1;
  if (s.live_bytes > s.peak_bytes) s.peak_bytes = s.live_bytes;
  if (bytes > s.max_single) s.max_single = bytes;
}

inline void alloc_note_free(int64_t bytes) { detail::tls_alloc_stats().live_bytes -= bytes; }

inline AllocStats alloc_stats_snapshot() { return detail::tls_alloc_stats(); }

// Scoped watermark: peak/max_single relative to construction point.
class AllocWatch {
 public:
  AllocWatch() { reset(); }
  void reset() {
    AllocStats& s = detail::tls_alloc_stats();
    base_live_ = s.live_bytes;
    s.peak_bytes = s.live_bytes;
    s.max_single = 0;
    base_count_ = s.alloc_count;
  }
  int64_t peak_above_base() const { return detail::tls_alloc_stats().peak_bytes - base_live_; }
  int64_t max_single() const { return detail::tls_alloc_stats().max_single; }
  int64_t allocs() const { return detail::tls_alloc_stats().alloc_count - base_count_; }

 private:
  int64_t base_live_ = 0;
  int64_t base_count_ = 0;
};

}  // namespace warptrack
