#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>

namespace ddm {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A stream is
/// fully determined by its 64-bit key; `for_path` derives the key for path
/// `index` of a batch from the master seed, so batches are reproducible
/// bit for bit regardless of how paths are scheduled across threads.
class Philox {
 public:
  using result_type = std::uint32_t;

  explicit Philox(std::uint64_t key = 0, std::uint64_t stream = 0) noexcept;

  /// Stream for path `index` under `master_seed`.
  static Philox for_path(std::uint64_t master_seed, std::uint64_t index) noexcept {
    return Philox(master_seed, index);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform double in (0, 1) with 53 random bits; never returns 0 or 1.
  double uniform() noexcept;
  /// Exponential variate with the given rate (> 0).
  double exponential(double rate) noexcept;
  /// Poisson variate; exact inversion for small means, std::poisson_distribution above.
  std::uint64_t poisson(double mean);

 private:
  void refill() noexcept;

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
};

/// Caps the worker count used by `parallel_for` (0 = hardware concurrency).
void set_max_threads(unsigned threads) noexcept;
unsigned max_threads() noexcept;

/// Runs body(i) for i in [0, count) over up to `max_threads()` workers.
/// The body must only write to slots owned by its index.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace ddm
