#pragma once

// Per-channel affine maps sending the training min/max of each signal to
// [-1, 1]: mapped = scale * raw + offset.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sskan/error.hpp"
#include "sskan/linalg.hpp"

namespace sskan {

struct ChannelMap {
  double scale = 1.0;
  double offset = 0.0;

  double apply(double raw) const noexcept { return scale * raw + offset; }
  double invert(double mapped) const noexcept { return (mapped - offset) / scale; }

  friend bool operator==(const ChannelMap&, const ChannelMap&) = default;
};

inline ChannelMap fit_channel(std::span<const double> data, const std::string& name = "channel") {
  require(!data.empty(), "zero-range-channel", name + ": no samples to normalize");
  const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  require(hi > lo, "zero-range-channel", name + ": channel has zero range");
  ChannelMap m;
  m.scale = 2.0 / (hi - lo);
  m.offset = -(hi + lo) / (hi - lo);
  return m;
}

inline Vector apply_map(const ChannelMap& m, std::span<const double> raw) {
  Vector out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(), [&](double v) { return m.apply(v); });
  return out;
}

inline Vector invert_map(const ChannelMap& m, std::span<const double> mapped) {
  Vector out(mapped.size());
  std::transform(mapped.begin(), mapped.end(), out.begin(), [&](double v) { return m.invert(v); });
  return out;
}

// SISO signals throughout the experiments; one map per direction.
struct Normalization {
  ChannelMap u;
  ChannelMap y;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

inline Normalization normalize_fit(std::span<const double> u_train, std::span<const double> y_train) {
  return {fit_channel(u_train, "u"), fit_channel(y_train, "y")};
}

}  // namespace sskan
