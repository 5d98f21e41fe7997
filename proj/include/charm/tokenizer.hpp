#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "charm/types.hpp"

namespace charm {

enum class Attribute { X = 0, Y = 1, Z = 2, Width = 3, Thickness = 4 };

constexpr int kPositionLevels = 512;
constexpr int kSizeLevels = 128;

struct QuantInterval {
  double lo = 0.0;
  double hi = 0.0;
  int levels = 0;

  bool operator==(const QuantInterval&) const = default;
};

// Piecewise non-uniform quantization grid. Bins are half-open [lo, hi);
// the global maximum maps into the last bin, out-of-range values clamp
// to the first/last token.
class PiecewiseScheme {
 public:
  // The default grid: x/y/z at 512 levels, w/t at 128, with the interval
  // split listed in attribute_intervals().
  static PiecewiseScheme standard();

  PiecewiseScheme(std::array<std::vector<QuantInterval>, 5> intervals);

  int quantize(double value, Attribute attr) const;
  double dequantize(int token, Attribute attr) const;

  int total_levels(Attribute attr) const;
  const std::vector<QuantInterval>& attribute_intervals(Attribute attr) const {
    return intervals_[static_cast<int>(attr)];
  }
  double range_min(Attribute attr) const { return intervals_[static_cast<int>(attr)].front().lo; }
  double range_max(Attribute attr) const { return intervals_[static_cast<int>(attr)].back().hi; }

  std::string to_json() const;
  static PiecewiseScheme from_json(const std::string& text);

  bool operator==(const PiecewiseScheme&) const = default;

 private:
  std::array<std::vector<QuantInterval>, 5> intervals_;
};

// Quantized control point.
struct TokenizedPoint {
  int px = 0, py = 0, pz = 0;  // [0, 512)
  int tw = 0, tt = 0;          // [0, 128)

  bool operator==(const TokenizedPoint&) const = default;
};

TokenizedPoint quantize_point(const ControlPoint& cp, const PiecewiseScheme& scheme);
ControlPoint dequantize_point(const TokenizedPoint& tp, const PiecewiseScheme& scheme);

}  // namespace charm
