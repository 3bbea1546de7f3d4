#ifndef MEDTRAJ_RNG_HPP
#define MEDTRAJ_RNG_HPP

#include <cstdint>
#include <random>

namespace medtraj {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic scalar stream. Distinct tags give independent substreams of
/// one seed; a stream is replayable by reconstructing it with the same pair.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t tag)
      : engine_(splitmix64(seed ^ splitmix64(tag))) {}

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace medtraj

#endif
