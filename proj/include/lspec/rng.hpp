#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace lspec {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// The 64-bit seed forms the key; (stream, block) form the 128-bit counter,
// so sub-streams indexed by (seed, stream) are independent and the whole
// sequence is reproducible byte-for-byte across platforms. Each block yields
// two 64-bit words. Doubles use the top 53 bits; normals use Box-Muller.
class Philox {
 public:
  explicit Philox(uint64_t seed, uint64_t stream = 0)
      : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
        stream_(stream) {}

  uint64_t next_u64() {
    if (word_ >= 4) fill_block();
    uint64_t lo = out_[word_];
    uint64_t hi = out_[word_ + 1];
    word_ += 2;
    return lo | (hi << 32);
  }

  // uniform on [0,1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // standard normal via Box-Muller; second value of each pair is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));  // 1-u1 in (0,1], no log(0)
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  void fill_block() {
    std::array<uint32_t, 4> ctr = {
        static_cast<uint32_t>(block_), static_cast<uint32_t>(block_ >> 32),
        static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)};
    std::array<uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
      const uint64_t p0 = 0xD2511F53ull * ctr[0];
      const uint64_t p1 = 0xCD9E8D57ull * ctr[2];
      ctr = {static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<uint32_t>(p1),
             static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<uint32_t>(p0)};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    out_ = ctr;
    ++block_;
    word_ = 0;
  }

  std::array<uint32_t, 2> key_;
  uint64_t stream_ = 0;
  uint64_t block_ = 0;
  std::array<uint32_t, 4> out_{};
  int word_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lspec
