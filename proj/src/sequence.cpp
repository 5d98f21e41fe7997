#include "charm/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace charm {
namespace {

struct CardKey {
  double angle = 0.0;
  double radius = 0.0;
  std::size_t index = 0;
};

Eigen::Vector2d mean_xz(const HairCard& card) {
  Eigen::Vector2d m(0.0, 0.0);
  for (const auto& p : card.points) m += Eigen::Vector2d(p.position.x(), p.position.z());
  return m / static_cast<double>(card.size());
}

}  // namespace

OrderingMode ordering_mode_from_string(const std::string& s) {
  if (s == "ccw") return OrderingMode::CCW;
  if (s == "x") return OrderingMode::X;
  if (s == "y") return OrderingMode::Y;
  if (s == "z") return OrderingMode::Z;
  throw ValueError("unknown ordering mode: " + s);
}

std::string to_string(OrderingMode mode) {
  switch (mode) {
    case OrderingMode::CCW: return "ccw";
    case OrderingMode::X: return "x";
    case OrderingMode::Y: return "y";
    case OrderingMode::Z: return "z";
  }
  return "ccw";
}

std::vector<std::size_t> order_cards(const Hairstyle& style, OrderingMode mode,
                                     double start_angle) {
  if (style.cards.empty()) throw ValueError("order_cards: empty hairstyle");
  const std::size_t n = style.cards.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;

  if (mode == OrderingMode::CCW) {
    Eigen::Vector2d center(0.0, 0.0);
    for (const auto& c : style.cards) center += mean_xz(c);
    center /= static_cast<double>(n);

    std::vector<CardKey> keys(n);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d d = mean_xz(style.cards[i]) - center;
      // angle 0 at -z, increasing counterclockwise viewed from +y:
      // direction(phi) = (-sin phi, -cos phi) in the (x, z) plane
      double phi = std::atan2(-d.x(), -d.y()) - start_angle;
      phi = std::fmod(phi, two_pi);
      if (phi < 0.0) phi += two_pi;
      keys[i] = {phi, d.norm(), i};
    }
    std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
      const auto& ka = keys[a];
      const auto& kb = keys[b];
      if (ka.angle != kb.angle) return ka.angle < kb.angle;
      if (ka.radius != kb.radius) return ka.radius < kb.radius;
      return ka.index < kb.index;
    });
    return perm;
  }

  const int axis = mode == OrderingMode::X ? 0 : mode == OrderingMode::Y ? 1 : 2;
  std::vector<double> key(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (const auto& p : style.cards[i].points) m += p.position[axis];
    key[i] = m / static_cast<double>(style.cards[i].size());
  }
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  return perm;
}

HairCard orient_root_to_tip(const HairCard& card, const Hairstyle& style_context) {
  if (card.size() < 2) throw GeometryError("orient_root_to_tip: card needs >= 2 points");
  double cx = 0.0, cz = 0.0, y_max = -std::numeric_limits<double>::infinity();
  std::size_t total = 0;
  for (const auto& c : style_context.cards) {
    for (const auto& p : c.points) {
      cx += p.position.x();
      cz += p.position.z();
      y_max = std::max(y_max, p.position.y());
      ++total;
    }
  }
  if (total == 0) throw ValueError("orient_root_to_tip: empty style context");
  const Vec3 ref(cx / total, y_max, cz / total);

  const double d_first = (card.points.front().position - ref).norm();
  const double d_last = (card.points.back().position - ref).norm();
  if (d_last < d_first) {
    HairCard rev = card;
    std::reverse(rev.points.begin(), rev.points.end());
    return rev;
  }
  return card;
}

HairSequence to_sequence(const Hairstyle& style, const PiecewiseScheme& scheme,
                         OrderingMode mode) {
  HairSequence seq;
  seq.ordering_mode = mode;
  seq.tokens.push_back(HairToken::sos());
  if (!style.cards.empty()) {
    const auto perm = order_cards(style, mode);
    bool first = true;
    for (std::size_t idx : perm) {
      if (!first) seq.tokens.push_back(HairToken::mos());
      first = false;
      const HairCard card = orient_root_to_tip(style.cards[idx], style);
      for (const auto& p : card.points)
        seq.tokens.push_back(HairToken::pt(quantize_point(p, scheme)));
    }
  }
  seq.tokens.push_back(HairToken::eos());
  if (seq.tokens.size() > kMaxSequenceTokens)
    throw BudgetError("to_sequence: sequence exceeds the 8192-token budget");
  return seq;
}

Hairstyle parse_sequence(const HairSequence& seq, const PiecewiseScheme& scheme,
                         ParseStats* stats) {
  const auto& t = seq.tokens;
  ParseStats local;
  if (t.empty() || t.front().kind != TokenKind::SOS)
    throw ParseError("parse_sequence: missing SOS at offset 0");
  if (t.back().kind != TokenKind::EOS)
    throw ParseError("parse_sequence: missing EOS at end-of-stream (offset " +
                     std::to_string(t.size()) + ")");

  Hairstyle style;
  HairCard current;
  auto flush = [&] {
    if (current.size() >= 2) {
      style.cards.push_back(std::move(current));
    } else if (!current.points.empty()) {
      ++local.dropped_short_cards;
    }
    current = {};
  };

  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    const auto& tok = t[i];
    switch (tok.kind) {
      case TokenKind::SOS:
        throw ParseError("parse_sequence: unexpected SOS at offset " + std::to_string(i));
      case TokenKind::EOS:
        throw ParseError("parse_sequence: unexpected EOS at offset " + std::to_string(i));
      case TokenKind::MOS:
        flush();
        break;
      case TokenKind::Point: {
        const auto& p = tok.point;
        if (p.px < 0 || p.px >= scheme.total_levels(Attribute::X) || p.py < 0 ||
            p.py >= scheme.total_levels(Attribute::Y) || p.pz < 0 ||
            p.pz >= scheme.total_levels(Attribute::Z) || p.tw < 0 ||
            p.tw >= scheme.total_levels(Attribute::Width) || p.tt < 0 ||
            p.tt >= scheme.total_levels(Attribute::Thickness))
          throw ParseError("parse_sequence: token out of vocabulary at offset " +
                           std::to_string(i));
        ControlPoint cp = dequantize_point(p, scheme);
        if (!current.points.empty() &&
            (current.points.back().position - cp.position).norm() == 0.0) {
          ++local.dropped_duplicate_points;
        } else {
          current.points.push_back(cp);
        }
        break;
      }
    }
  }
  flush();
  if (stats) *stats = local;
  return style;
}

bool sequence_is_valid(const HairSequence& seq, std::string* reason) {
  const auto& t = seq.tokens;
  auto fail = [&](const std::string& why) {
    if (reason) *reason = why;
    return false;
  };
  if (t.size() < 2) return fail("too short");
  if (t.front().kind != TokenKind::SOS) return fail("missing SOS");
  if (t.back().kind != TokenKind::EOS) return fail("missing EOS");
  if (t.size() > kMaxSequenceTokens) return fail("token budget exceeded");
  std::size_t segment_points = 0;
  bool any_content = false;
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    switch (t[i].kind) {
      case TokenKind::SOS: return fail("interior SOS");
      case TokenKind::EOS: return fail("interior EOS");
      case TokenKind::MOS:
        if (!any_content && segment_points == 0) return fail("MOS immediately after SOS");
        if (segment_points == 0) return fail("consecutive MOS");
        if (segment_points < 2) return fail("card segment with < 2 points");
        segment_points = 0;
        any_content = true;
        break;
      case TokenKind::Point:
        ++segment_points;
        any_content = true;
        break;
    }
  }
  if (any_content && segment_points == 0 && t.size() > 2)
    return fail("MOS directly before EOS");
  if (any_content && segment_points > 0 && segment_points < 2)
    return fail("card segment with < 2 points");
  return true;
}

std::string sequence_to_text(const HairSequence& seq) {
  std::ostringstream os;
  for (const auto& tok : seq.tokens) {
    switch (tok.kind) {
      case TokenKind::SOS: os << "SOS\n"; break;
      case TokenKind::EOS: os << "EOS\n"; break;
      case TokenKind::MOS: os << "MOS\n"; break;
      case TokenKind::Point:
        os << "P " << tok.point.px << ' ' << tok.point.py << ' ' << tok.point.pz << ' '
           << tok.point.tw << ' ' << tok.point.tt << '\n';
        break;
    }
  }
  return os.str();
}

HairSequence sequence_from_text(const std::string& text) {
  HairSequence seq;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "SOS") {
      seq.tokens.push_back(HairToken::sos());
    } else if (line == "EOS") {
      seq.tokens.push_back(HairToken::eos());
    } else if (line == "MOS") {
      seq.tokens.push_back(HairToken::mos());
    } else if (line.rfind("P ", 0) == 0) {
      std::istringstream ls(line.substr(2));
      TokenizedPoint p;
      if (!(ls >> p.px >> p.py >> p.pz >> p.tw >> p.tt))
        throw ParseError("token text: bad point at line " + std::to_string(lineno));
      seq.tokens.push_back(HairToken::pt(p));
    } else {
      throw ParseError("token text: unknown token at line " + std::to_string(lineno));
    }
  }
  return seq;
}

}  // namespace charm
