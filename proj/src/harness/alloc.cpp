// Global allocator instrumented with a live-byte count and a high-water
// mark. Each block carries a header holding its size.

#include "gear/harness.hpp"

#include <atomic>
#include <cstdlib>
#include <new>

namespace {

constexpr std::size_t header = alignof(std::max_align_t);

std::atomic<std::size_t> live{0};
std::atomic<std::size_t> peak{0};

void* counted_alloc(std::size_t n) noexcept {
    void* raw = std::malloc(n + header);
    if (raw == nullptr) return nullptr;
    *static_cast<std::size_t*>(raw) = n;
    const std::size_t now = live.fetch_add(n, std::memory_order_relaxed) + n;
    std::size_t seen = peak.load(std::memory_order_relaxed);
    while (now > seen && !peak.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
    }
    return static_cast<char*>(raw) + header;
}

void counted_free(void* p) noexcept {
    if (p == nullptr) return;
    void* raw = static_cast<char*>(p) - header;
    live.fetch_sub(*static_cast<std::size_t*>(raw), std::memory_order_relaxed);
    std::free(raw);
}

void* checked_alloc(std::size_t n) {
    void* p = counted_alloc(n == 0 ? 1 : n);
    if (p == nullptr) throw std::bad_alloc();
    return p;
}

}  // namespace

void* operator new(std::size_t n) { return checked_alloc(n); }
void* operator new[](std::size_t n) { return checked_alloc(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return counted_alloc(n == 0 ? 1 : n); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return counted_alloc(n == 0 ? 1 : n); }
void operator delete(void* p) noexcept { counted_free(p); }
void operator delete[](void* p) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t) noexcept { counted_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { counted_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { counted_free(p); }

namespace gear::harness {

std::size_t allocated_bytes() { return live.load(std::memory_order_relaxed); }
std::size_t peak_allocated_bytes() { return peak.load(std::memory_order_relaxed); }
void reset_peak_allocated_bytes() { peak.store(live.load(std::memory_order_relaxed), std::memory_order_relaxed); }

}  // namespace gear::harness
