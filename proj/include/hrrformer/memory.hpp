#pragma once

// Byte accounting for tensor payloads. Every tensor buffer is allocated
// through CountingAllocator so benchmarks can report peak live bytes, and an
// optional limit turns an oversized allocation into std::bad_alloc.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>
#include <vector>

namespace hrrformer {

class MemoryTracker {
 public:
  static MemoryTracker& instance() {
    static MemoryTracker tracker;
    return tracker;
  }

  void on_allocate(std::size_t bytes) {
    const std::size_t limit = limit_.load(std::memory_order_relaxed);
    const std::size_t now = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    if (limit != 0 && now > limit) {
      live_.fetch_sub(bytes, std::memory_order_relaxed);
      throw std::bad_alloc();
    }
    std::size_t peak = peak_.load(std::memory_order_relaxed);
    while (now > peak &&
           !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
  }

  void on_deallocate(std::size_t bytes) noexcept {
    live_.fetch_sub(bytes, std::memory_order_relaxed);
  }

  std::size_t live_bytes() const noexcept { return live_.load(std::memory_order_relaxed); }
  std::size_t peak_bytes() const noexcept { return peak_.load(std::memory_order_relaxed); }

  // Restart peak tracking from the current live size.
  void reset_peak() noexcept { peak_.store(live_bytes(), std::memory_order_relaxed); }

  // 0 disables the limit.
  void set_limit(std::size_t bytes) noexcept { limit_.store(bytes, std::memory_order_relaxed); }
  std::size_t limit() const noexcept { return limit_.load(std::memory_order_relaxed); }

 private:
  MemoryTracker() = default;

  std::atomic<std::size_t> live_{0};
  std::atomic<std::size_t> peak_{0};
  std::atomic<std::size_t> limit_{0};
};

// RAII: installs a byte limit for the lifetime of the guard.
class MemoryLimitGuard {
 public:
  explicit MemoryLimitGuard(std::size_t bytes)
      : previous_(MemoryTracker::instance().limit()) {
    MemoryTracker::instance().set_limit(bytes);
  }
  ~MemoryLimitGuard() { MemoryTracker::instance().set_limit(previous_); }
  MemoryLimitGuard(const MemoryLimitGuard&) = delete;
  MemoryLimitGuard& operator=(const MemoryLimitGuard&) = delete;

 private:
  std::size_t previous_;
};

template <class T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    MemoryTracker::instance().on_allocate(bytes);
    try {
      return static_cast<T*>(::operator new(bytes));
    } catch (...) {
      MemoryTracker::instance().on_deallocate(bytes);
      throw;
    }
  }

  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p);
    MemoryTracker::instance().on_deallocate(n * sizeof(T));
  }

  template <class U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

// Flat storage for tensor payloads and kernel scratch space.
template <class T>
using Buffer = std::vector<T, CountingAllocator<T>>;

}  // namespace hrrformer
