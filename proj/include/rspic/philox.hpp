// Copyright 2026 The rspic Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>

namespace rspic {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). The output
// is a pure function of (key, counter), so any block of any stream can be
// produced independently of every other one.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter Generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

namespace internal {

// Layer tables of the 128-layer Marsaglia-Tsang ziggurat.
struct ZigguratTables {
  std::array<std::int64_t, 128> k{};
  std::array<double, 128> w{};
  std::array<double, 128> f{};

  ZigguratTables() {
    const double m1 = 2147483648.0;
    const double vn = 9.91256303526217e-3;
    double dn = 3.442619855899;
    double tn = dn;
    const double q = vn / std::exp(-0.5 * dn * dn);
    k[0] = static_cast<std::int64_t>((dn / q) * m1);
    k[1] = 0;
    w[0] = q / m1;
    w[127] = dn / m1;
    f[0] = 1.0;
    f[127] = std::exp(-0.5 * dn * dn);
    for (int i = 126; i >= 1; --i) {
      dn = std::sqrt(-2.0 * std::log(vn / dn + std::exp(-0.5 * dn * dn)));
      k[i + 1] = static_cast<std::int64_t>((dn / tn) * m1);
      tn = dn;
      f[i] = std::exp(-0.5 * dn * dn);
      w[i] = dn / m1;
    }
  }

  static const ZigguratTables& Get() {
    static const ZigguratTables tables;
    return tables;
  }
};

}  // namespace internal

// Standard normal stream for one Monte Carlo path. Keyed by the experiment
// seed and addressed by (path, block): block b of path k is
// Philox(key = seed, counter = (b, k)), so a path's draws never depend on
// which thread or in which order paths are generated. Normals come from a
// ziggurat over 64-bit words; the layer index and the 32-bit abscissa use
// disjoint bits of each word.
class PathNormalStream {
 public:
  PathNormalStream(std::uint64_t seed, std::uint64_t path)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        path_(path),
        tables_(&internal::ZigguratTables::Get()) {}

  double Next() {
    const auto& t = *tables_;
    std::uint64_t word = NextWord();
    auto hz = static_cast<std::int32_t>(word >> 32);
    auto iz = static_cast<int>(word & 127u);
    if (std::abs(static_cast<std::int64_t>(hz)) < t.k[iz]) return hz * t.w[iz];
    for (;;) {
      constexpr double kTail = 3.442619855899;
      double x = hz * t.w[iz];
      if (iz == 0) {
        double y;
        do {
          x = -std::log(NextUniform()) / kTail;
          y = -std::log(NextUniform());
        } while (y + y < x * x);
        return hz > 0 ? kTail + x : -kTail - x;
      }
      if (t.f[iz] + NextUniform() * (t.f[iz - 1] - t.f[iz]) <
          std::exp(-0.5 * x * x)) {
        return x;
      }
      word = NextWord();
      hz = static_cast<std::int32_t>(word >> 32);
      iz = static_cast<int>(word & 127u);
      if (std::abs(static_cast<std::int64_t>(hz)) < t.k[iz]) {
        return hz * t.w[iz];
      }
    }
  }

  std::uint64_t NextWord() {
    if (!have_spare_) {
      const auto out = Philox4x32::Generate(
          {static_cast<std::uint32_t>(block_),
           static_cast<std::uint32_t>(block_ >> 32),
           static_cast<std::uint32_t>(path_),
           static_cast<std::uint32_t>(path_ >> 32)},
          key_);
      ++block_;
      spare_ = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
      have_spare_ = true;
      return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    }
    have_spare_ = false;
    return spare_;
  }

  // 53 random bits mapped into (0, 1).
  double NextUniform() {
    return (static_cast<double>(NextWord() >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  Philox4x32::Key key_;
  std::uint64_t path_;
  const internal::ZigguratTables* tables_;
  std::uint64_t block_ = 0;
  std::uint64_t spare_ = 0;
  bool have_spare_ = false;
};

}  // namespace rspic
