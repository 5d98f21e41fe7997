#include "charm/tokenizer.hpp"

#include <cmath>

#include <json.hpp>

namespace charm {

PiecewiseScheme PiecewiseScheme::standard() {
  std::array<std::vector<QuantInterval>, 5> iv;
  iv[0] = {{-0.5, -0.1, 96}, {-0.1, 0.1, 320}, {0.1, 0.5, 96}};    // x
  iv[1] = {{-0.5, 0.0, 96}, {0.0, 0.3, 160}, {0.3, 0.5, 256}};     // y
  iv[2] = {{-0.5, -0.15, 96}, {-0.15, 0.1, 320}, {0.1, 0.5, 96}};  // z
  iv[3] = {{0.0, 0.03, 64}, {0.03, 0.1, 64}};                      // width
  iv[4] = {{0.0, 0.02, 64}, {0.02, 0.1, 64}};                      // thickness
  return PiecewiseScheme(std::move(iv));
}

PiecewiseScheme::PiecewiseScheme(std::array<std::vector<QuantInterval>, 5> intervals)
    : intervals_(std::move(intervals)) {
  for (const auto& segs : intervals_) {
    if (segs.empty()) throw ValueError("PiecewiseScheme: empty attribute");
    double prev_hi = segs.front().lo;
    for (const auto& s : segs) {
      if (s.levels <= 0 || s.hi <= s.lo) throw ValueError("PiecewiseScheme: bad interval");
      if (s.lo != prev_hi) throw ValueError("PiecewiseScheme: intervals not contiguous");
      prev_hi = s.hi;
    }
  }
}

int PiecewiseScheme::total_levels(Attribute attr) const {
  int total = 0;
  for (const auto& s : intervals_[static_cast<int>(attr)]) total += s.levels;
  return total;
}

int PiecewiseScheme::quantize(double value, Attribute attr) const {
  if (std::isnan(value)) throw ValueError("quantize: NaN input");
  const auto& segs = intervals_[static_cast<int>(attr)];
  if (value <= segs.front().lo) return 0;
  if (value >= segs.back().hi) return total_levels(attr) - 1;
  int offset = 0;
  for (const auto& s : segs) {
    if (value < s.hi) {
      const double bw = (s.hi - s.lo) / s.levels;
      int k = static_cast<int>(std::floor((value - s.lo) / bw));
      if (k >= s.levels) k = s.levels - 1;  // float edge safety
      if (k < 0) k = 0;
      return offset + k;
    }
    offset += s.levels;
  }
  return offset - 1;  // unreachable for finite input
}

double PiecewiseScheme::dequantize(int token, Attribute attr) const {
  if (token < 0 || token >= total_levels(attr)) throw ValueError("dequantize: token out of range");
  const auto& segs = intervals_[static_cast<int>(attr)];
  int offset = 0;
  for (const auto& s : segs) {
    if (token < offset + s.levels) {
      const double bw = (s.hi - s.lo) / s.levels;
      return s.lo + (token - offset + 0.5) * bw;
    }
    offset += s.levels;
  }
  throw ValueError("dequantize: token out of range");
}

std::string PiecewiseScheme::to_json() const {
  nlohmann::json j;
  static const char* names[5] = {"x", "y", "z", "w", "t"};
  for (int a = 0; a < 5; ++a) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : intervals_[a]) segs.push_back({{"lo", s.lo}, {"hi", s.hi}, {"levels", s.levels}});
    j[names[a]] = segs;
  }
  return j.dump(2);
}

PiecewiseScheme PiecewiseScheme::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scheme JSON: ") + e.what());
  }
  static const char* names[5] = {"x", "y", "z", "w", "t"};
  std::array<std::vector<QuantInterval>, 5> iv;
  for (int a = 0; a < 5; ++a) {
    if (!j.contains(names[a])) throw ParseError("scheme JSON: missing attribute");
    for (const auto& s : j[names[a]])
      iv[a].push_back({s.at("lo").get<double>(), s.at("hi").get<double>(), s.at("levels").get<int>()});
  }
  return PiecewiseScheme(std::move(iv));
}

TokenizedPoint quantize_point(const ControlPoint& cp, const PiecewiseScheme& scheme) {
  TokenizedPoint tp;
  tp.px = scheme.quantize(cp.position.x(), Attribute::X);
  tp.py = scheme.quantize(cp.position.y(), Attribute::Y);
  tp.pz = scheme.quantize(cp.position.z(), Attribute::Z);
  tp.tw = scheme.quantize(cp.width, Attribute::Width);
  tp.tt = scheme.quantize(cp.thickness, Attribute::Thickness);
  return tp;
}

ControlPoint dequantize_point(const TokenizedPoint& tp, const PiecewiseScheme& scheme) {
  ControlPoint cp;
  cp.position = Vec3(scheme.dequantize(tp.px, Attribute::X), scheme.dequantize(tp.py, Attribute::Y),
                     scheme.dequantize(tp.pz, Attribute::Z));
  cp.width = scheme.dequantize(tp.tw, Attribute::Width);
  cp.thickness = scheme.dequantize(tp.tt, Attribute::Thickness);
  return cp;
}

}  // namespace charm
