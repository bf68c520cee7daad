#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace kp {

std::uint64_t fnv1a64(std::string_view s);

std::uint64_t splitmix64(std::uint64_t x);

// Labelled fan-out from one root seed. Every random decision in a run is
// seeded through this so whole-run reproducibility reduces to one knob.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0);

// Deterministic RNG wrapper. Draws are defined as eng() % n so results are
// reproducible from the seed alone and easy to re-derive in oracle code.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  std::uint64_t next_below(std::uint64_t n) { return eng_() % n; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    // Fisher-Yates with explicit draws; std::shuffle is avoided because its
    // draw sequence is not pinned by the standard.
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace kp
