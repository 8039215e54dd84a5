#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace scenedistill {

/// Counter-based random stream. Draw n of stream (seed, id) is a pure
/// function of (seed, id, n), so sequences are identical on every platform
/// and independent streams can be derived without shared state.
///
/// Not thread-safe; derive one stream per unit of parallel work.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t position() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi] inclusive, unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  double normal();
  double gamma(double shape);
  double beta(double a, double b);
  /// Uniformly random permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  /// Child stream sharing this seed; independent of this stream's position.
  RngStream derive(std::uint64_t child) const;
  RngStream derive(std::string_view name) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace scenedistill
