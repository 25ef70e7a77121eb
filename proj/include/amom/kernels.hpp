#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace amom {

namespace detail {

inline std::size_t& thread_cap_slot() {
  static std::size_t cap = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("AMOM_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
    }
    return hw;
  }();
  return cap;
}

}  // namespace detail

// Maximum worker threads used inside a kernel (AMOM_THREADS caps it).
inline std::size_t kernel_threads() { return detail::thread_cap_slot(); }

// Temporarily lowers the kernel thread cap (latency measurement runs at 1).
class ThreadCapGuard {
 public:
  explicit ThreadCapGuard(std::size_t cap) : saved_(detail::thread_cap_slot()) {
    detail::thread_cap_slot() = std::max<std::size_t>(1, std::min(cap, saved_));
  }
  ~ThreadCapGuard() { detail::thread_cap_slot() = saved_; }
  ThreadCapGuard(const ThreadCapGuard&) = delete;
  ThreadCapGuard& operator=(const ThreadCapGuard&) = delete;

 private:
  std::size_t saved_;
};

// Splits [0, n) into contiguous chunks whose boundaries are multiples of
// `align`. Chunk boundaries never affect results: every kernel computes each
// output element with the same instruction sequence wherever it lands.
template <class Fn>
void parallel_for(std::size_t n, std::size_t align, std::size_t work, Fn&& fn) {
  std::size_t threads = kernel_threads();
  constexpr std::size_t kMinWorkPerThread = 1u << 20;
  threads = std::min(threads, std::max<std::size_t>(1, work / kMinWorkPerThread));
  std::size_t blocks = (n + align - 1) / align;
  threads = std::min(threads, std::max<std::size_t>(1, blocks));
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t per = (blocks + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    std::size_t b = std::min(n, t * per * align);
    std::size_t e = std::min(n, (t + 1) * per * align);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

namespace detail {

// C[rows, :] (+)= A[rows, :] * B with A m x k, B k x n, all row-major.
// Each output element is one sequential fused-multiply-add chain over
// p = 0..k-1, whichever loop computes it.
template <class T>
void gemm_rows(std::size_t r0, std::size_t r1, std::size_t n, std::size_t k, const T* a,
               const T* b, T* c, bool accumulate) {
  constexpr std::size_t MR = 4;
  constexpr std::size_t NR = 64 / sizeof(T) * 2;  // 32 floats / 16 doubles
  std::size_t i = r0;
  for (; i + MR <= r1; i += MR) {
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) {
      T acc[MR][NR];
      for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t q = 0; q < NR; ++q) acc[r][q] = accumulate ? c[(i + r) * n + j + q] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j;
        for (std::size_t r = 0; r < MR; ++r) {
          const T av = a[(i + r) * k + p];
          for (std::size_t q = 0; q < NR; ++q) acc[r][q] = std::fma(av, brow[q], acc[r][q]);
        }
      }
      for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t q = 0; q < NR; ++q) c[(i + r) * n + j + q] = acc[r][q];
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < MR; ++r) {
        T acc = accumulate ? c[(i + r) * n + j] : T{0};
        for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[(i + r) * k + p], b[p * n + j], acc);
        c[(i + r) * n + j] = acc;
      }
    }
  }
  for (; i < r1; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t q = 0; q < n; ++q) crow[q] = std::fma(av, brow[q], crow[q]);
    }
  }
}

}  // namespace detail

// C (+)= A * B, row-major, A m x k, B k x n.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate = false) {
  parallel_for(m, 4, m * n * k, [&](std::size_t r0, std::size_t r1) {
    detail::gemm_rows(r0, r1, n, k, a, b, c, accumulate);
  });
}

// Out-of-place transpose of a rows x cols row-major matrix.
template <class T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

}  // namespace amom
