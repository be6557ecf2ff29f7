#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>

namespace voterlab {

// A point of Z^2 in lattice units.
struct Site {
  std::int32_t x = 0;
  std::int32_t y = 0;

  friend constexpr bool operator==(const Site&, const Site&) = default;
  friend constexpr auto operator<=>(const Site&, const Site&) = default;

  constexpr Site operator+(const Site& o) const noexcept { return {x + o.x, y + o.y}; }
  constexpr Site operator-(const Site& o) const noexcept { return {x - o.x, y - o.y}; }

  constexpr std::int64_t norm2() const noexcept {
    return static_cast<std::int64_t>(x) * x + static_cast<std::int64_t>(y) * y;
  }
  double norm() const noexcept { return std::sqrt(static_cast<double>(norm2())); }
  constexpr bool is_origin() const noexcept { return x == 0 && y == 0; }
};

inline constexpr Site kOrigin{0, 0};

// Nearest-neighbour steps, indexed 0..3 (E, W, N, S).
inline constexpr std::array<Site, 4> kSteps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

struct SiteHash {
  std::size_t operator()(const Site& s) const noexcept {
    const auto packed = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(s.x)) << 32) |
                        static_cast<std::uint32_t>(s.y);
    return std::hash<std::uint64_t>{}(packed * 0x9e3779b97f4a7c15ULL);
  }
};

}  // namespace voterlab
