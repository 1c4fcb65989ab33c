#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace demr {

std::uint64_t splitmix64(std::uint64_t x);

// Named sub-stream derivation: every random decision in the project draws
// from a stream derived from the single run seed plus a label (and optional
// index), so no two components share RNG state.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                          std::uint64_t index);

// mt19937_64 core with hand-rolled output transforms. std::*_distribution is
// implementation-defined and would break bit-level reproducibility, so the
// uniform/normal/beta draws are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive on both ends
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Box-Muller, two fresh uniforms per draw
  double normal();

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  // Beta(1, conc) via inverse CDF; density conc*(1-x)^(conc-1) on [0,1],
  // concentrated toward 0 for conc > 1.
  double beta_one(double conc);

 private:
  std::mt19937_64 gen_;
};

}  // namespace demr
