#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace xplace {

/// xoshiro256** seeded through splitmix64. The stream is a pure function of
/// the seed, so runs are reproducible across platforms and compilers.
///
/// Not thread-safe; hand each worker its own `substream`.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64";

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one cached spare).
  double normal();

  /// Independent generator for a named child stream.
  Rng substream(std::uint64_t stream_id) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace xplace
