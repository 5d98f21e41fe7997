#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "charm/tokenizer.hpp"
#include "charm/types.hpp"

namespace charm {

constexpr std::size_t kMaxSequenceTokens = 8192;

enum class OrderingMode { CCW, X, Y, Z };

OrderingMode ordering_mode_from_string(const std::string& s);
std::string to_string(OrderingMode mode);

enum class TokenKind { SOS, EOS, MOS, Point };

struct HairToken {
  TokenKind kind = TokenKind::SOS;
  TokenizedPoint point;  // valid when kind == Point

  static HairToken sos() { return {TokenKind::SOS, {}}; }
  static HairToken eos() { return {TokenKind::EOS, {}}; }
  static HairToken mos() { return {TokenKind::MOS, {}}; }
  static HairToken pt(const TokenizedPoint& p) { return {TokenKind::Point, p}; }

  bool operator==(const HairToken&) const = default;
};

struct HairSequence {
  std::vector<HairToken> tokens;
  OrderingMode ordering_mode = OrderingMode::CCW;
};

// Card order for serialization. CCW sorts by angle of each card's mean
// (x, z) around the style's mean (x, z), starting from -z (back of the
// head, character facing +z) and proceeding counterclockwise viewed
// from +y; ties by radius, then original index. X/Y/Z sort ascending by
// mean coordinate.
std::vector<std::size_t> order_cards(const Hairstyle& style, OrderingMode mode,
                                     double start_angle = 0.0);

// Reverses the card when its tip is closer than its root to the point
// (mean_x, max_y, mean_z) of the style. Idempotent.
HairCard orient_root_to_tip(const HairCard& card, const Hairstyle& style_context);

// SOS, per-card quantized points separated by MOS, EOS. Cards are
// ordered and oriented first.
HairSequence to_sequence(const Hairstyle& style, const PiecewiseScheme& scheme, OrderingMode mode);

struct ParseStats {
  std::size_t dropped_short_cards = 0;
  std::size_t dropped_duplicate_points = 0;
};

// Inverse of to_sequence: split on MOS/EOS and dequantize. Consecutive
// duplicate positions are collapsed and cards left with < 2 points are
// dropped (counted in stats), so the result always satisfies the
// HairCard invariants.
Hairstyle parse_sequence(const HairSequence& seq, const PiecewiseScheme& scheme,
                         ParseStats* stats = nullptr);

// Structural validity per the sequence grammar (SOS first, EOS last, no
// leading/double MOS, every segment >= 2 points, budget respected).
bool sequence_is_valid(const HairSequence& seq, std::string* reason = nullptr);

// Text form, one token per line: SOS / MOS / EOS / "P px py pz tw tt".
std::string sequence_to_text(const HairSequence& seq);
HairSequence sequence_from_text(const std::string& text);

}  // namespace charm
