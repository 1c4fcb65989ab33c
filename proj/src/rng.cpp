#include "demr/rng.hpp"

#include <cmath>
#include <numbers>

namespace demr {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

static std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  return splitmix64(base ^ fnv1a64(stream));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                          std::uint64_t index) {
  return splitmix64(derive_seed(base, stream) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

double Rng::normal() {
  // u1 in (0,1] so the log is finite
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::beta_one(double conc) {
  double u = uniform();
  return 1.0 - std::pow(1.0 - u, 1.0 / conc);
}

}  // namespace demr
