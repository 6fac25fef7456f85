#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xpol {

// Error taxonomy. Every throwing operation documents which of these it uses.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define XPOL_DEFINE_ERROR(Name) \
  struct Name : Error {         \
    using Error::Error;         \
  }

XPOL_DEFINE_ERROR(ShapeMismatch);
XPOL_DEFINE_ERROR(LengthMismatch);
XPOL_DEFINE_ERROR(DegenerateRotation);
XPOL_DEFINE_ERROR(NotARotation);
XPOL_DEFINE_ERROR(InvalidRange);
XPOL_DEFINE_ERROR(IndexOutOfRange);
XPOL_DEFINE_ERROR(ConditionInvalid);
XPOL_DEFINE_ERROR(ConfigError);
XPOL_DEFINE_ERROR(EmptyDataset);
XPOL_DEFINE_ERROR(NonFiniteLoss);
XPOL_DEFINE_ERROR(VersionMismatch);
XPOL_DEFINE_ERROR(IoError);

#undef XPOL_DEFINE_ERROR

// Seeded RNG with named sub-streams.
//
// Every stochastic quantity in the project draws from a stream obtained via
// derive(root_seed, "stream-name", index), so adding or removing one consumer
// never shifts the draws seen by another. All distributions are hand-rolled
// on top of mt19937_64 so sequences are identical across platforms and
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng derive(std::uint64_t root, std::string_view stream,
                    std::uint64_t index = 0);

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi), rejection-free via 64-bit modulo on a wide range.
  // Range sizes here are tiny relative to 2^64 so modulo bias is negligible,
  // but we keep rejection sampling anyway to stay exact.
  std::uint64_t uniform_index(std::uint64_t n);

  int uniform_int(int lo, int hi_exclusive) {
    return lo + static_cast<int>(
                    uniform_index(static_cast<std::uint64_t>(hi_exclusive - lo)));
  }

  // Standard normal via Box-Muller; the spare is cached per-object.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform direction on S^2 (normalized Gaussian triple).
  std::array<double, 3> unit_vector();

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace xpol
