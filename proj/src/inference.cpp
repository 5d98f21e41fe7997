#include "charm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "charm/spline.hpp"

namespace charm {

namespace {

constexpr int kSplineWindow = 8;

double uniform01(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

int sample_category(const Eigen::VectorXd& logits, const InferenceConfig& cfg,
                    std::mt19937_64& rng) {
  if (cfg.sampling == SamplingMode::Greedy) {
    int arg = 0;
    logits.maxCoeff(&arg);
    return arg;
  }
  const int k = std::min<int>(cfg.top_k, static_cast<int>(logits.size()));
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int a, int b) { return logits(a) != logits(b) ? logits(a) > logits(b)
                                                                      : a < b; });
  Eigen::VectorXd p(k);
  double mx = logits(order[0]);
  for (int i = 0; i < k; ++i) p(i) = std::exp((logits(order[i]) - mx) / cfg.temperature);
  p /= p.sum();
  const double u = uniform01(rng);
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += p(i);
    if (u < acc) return order[i];
  }
  return order[k - 1];
}

Vec3 dequantize_position(int px, int py, int pz, const PiecewiseScheme& scheme) {
  return {scheme.dequantize(px, Attribute::X), scheme.dequantize(py, Attribute::Y),
          scheme.dequantize(pz, Attribute::Z)};
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

void InferenceConfig::validate() const {
  if (spline_threshold <= 0.0 || root_threshold <= 0.0)
    throw ValueError("InferenceConfig: thresholds must be positive");
  if (soft_card_cap < 2 || soft_card_cap >= hard_card_cap)
    throw ValueError("InferenceConfig: need 2 <= soft_card_cap < hard_card_cap");
  if (root_alternatives < 1 || spline_min_index < 2 || min_cards_for_eos < 0)
    throw ValueError("InferenceConfig: counts out of range");
  if (sampling == SamplingMode::TopK && (top_k < 1 || temperature <= 0.0))
    throw ValueError("InferenceConfig: bad top-k settings");
}

std::string log_to_jsonl(const std::vector<GenerationLogEntry>& log) {
  std::ostringstream os;
  for (const auto& e : log) {
    nlohmann::json j{{"step", e.step}, {"card", e.card}, {"action", e.action},
                     {"detail", e.detail}};
    os << j.dump() << "\n";
  }
  return os.str();
}

bool coherence_check(const std::vector<Vec3>& accepted, const Vec3& candidate,
                     const InferenceConfig& cfg, double* deviation) {
  if (static_cast<int>(accepted.size()) + 1 < cfg.spline_min_index) return true;
  const std::size_t window = std::min<std::size_t>(kSplineWindow, accepted.size());
  const std::size_t first = accepted.size() - window;
  std::vector<double> xs(window);
  std::iota(xs.begin(), xs.end(), static_cast<double>(first));

  Vec3 predicted;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> ys(window);
    for (std::size_t i = 0; i < window; ++i) ys[i] = accepted[first + i](axis);
    predicted(axis) = CubicSpline(xs, ys)(static_cast<double>(accepted.size()));
  }
  const double dev = (candidate - predicted).norm();
  if (deviation) *deviation = dev;
  return dev <= cfg.spline_threshold;
}

RootDecision verify_root(int px, int py, int pz, const Eigen::MatrixXd& pos_logits,
                         const KdTree& cloud_index, const PiecewiseScheme& scheme,
                         const InferenceConfig& cfg) {
  RootDecision out{px, py, pz, false, 0.0};
  out.distance = cloud_index.nearest(dequantize_position(px, py, pz, scheme)).second;
  if (out.distance <= cfg.root_threshold) return out;

  const int vocab = static_cast<int>(pos_logits.cols());
  std::array<std::vector<int>, 3> rank;
  for (int axis = 0; axis < 3; ++axis) {
    rank[axis].resize(vocab);
    std::iota(rank[axis].begin(), rank[axis].end(), 0);
    std::stable_sort(rank[axis].begin(), rank[axis].end(), [&](int a, int b) {
      return pos_logits(axis, a) != pos_logits(axis, b) ? pos_logits(axis, a) > pos_logits(axis, b)
                                                        : a < b;
    });
  }
  auto score = [&](const std::array<int, 3>& r) {
    return pos_logits(0, rank[0][r[0]]) + pos_logits(1, rank[1][r[1]]) +
           pos_logits(2, rank[2][r[2]]);
  };

  // best-first over per-axis rank triples: the k-th pop is the k-th most
  // probable joint combination
  using Entry = std::pair<double, std::array<int, 3>>;
  std::priority_queue<Entry> queue;
  std::set<std::array<int, 3>> seen;
  queue.push({score({0, 0, 0}), {0, 0, 0}});
  seen.insert({0, 0, 0});

  std::array<int, 3> best_tokens{px, py, pz};
  double best_dist = out.distance;
  for (int popped = 0; popped < cfg.root_alternatives && !queue.empty(); ++popped) {
    const auto [s, r] = queue.top();
    queue.pop();
    const std::array<int, 3> toks{rank[0][r[0]], rank[1][r[1]], rank[2][r[2]]};
    const double dist =
        cloud_index.nearest(dequantize_position(toks[0], toks[1], toks[2], scheme)).second;
    if (dist <= cfg.root_threshold) {
      best_tokens = toks;
      best_dist = dist;
      break;
    }
    if (dist < best_dist) {
      best_tokens = toks;
      best_dist = dist;
    }
    for (int axis = 0; axis < 3; ++axis) {
      std::array<int, 3> next = r;
      if (++next[axis] >= vocab) continue;
      if (seen.insert(next).second) queue.push({score(next), next});
    }
  }

  out.corrected = best_tokens != std::array<int, 3>{px, py, pz};
  out.px = best_tokens[0];
  out.py = best_tokens[1];
  out.pz = best_tokens[2];
  out.distance = best_dist;
  return out;
}

HairCard normalize_length(const HairCard& card, const InferenceConfig& cfg) {
  if (static_cast<int>(card.points.size()) <= cfg.soft_card_cap) return card;
  return resample_card(card, static_cast<std::size_t>(cfg.soft_card_cap));
}

GenerationResult generate(const PointCloud& condition, const ModelWeights& weights,
                          const PiecewiseScheme& scheme, const InferenceConfig& cfg) {
  cfg.validate();
  if (condition.points.empty()) throw ValueError("generate: empty condition cloud");

  GenerationResult result;
  const KdTree kd(condition.points);
  const ConditionTokens cond = encode_condition(condition, weights);
  DecoderState state = init_decoder(cond, weights);
  std::mt19937_64 rng(cfg.seed);

  std::vector<HairToken>& tokens = result.sequence.tokens;
  tokens.push_back(HairToken::sos());
  Eigen::VectorXd f = decoder_append(state, tokens.back(), weights);

  int completed = 0;
  std::vector<Vec3> current;          // accepted positions of the open card
  std::size_t current_first_token = 1;  // index in tokens where the open card starts

  auto emit = [&](const HairToken& tok) {
    tokens.push_back(tok);
    f = decoder_append(state, tok, weights);
  };
  auto close_card = [&]() {
    ++completed;
    current.clear();
    current_first_token = tokens.size() + 1;  // past the MOS about to exist
  };
  auto emit_mos_if_room = [&]() {
    if (state.length < weights.config.max_tokens) emit(HairToken::mos());
  };

  bool finished = false;
  while (!finished) {
    if (state.length >= weights.config.max_tokens) {
      // out of budget: keep only complete cards
      if (current.size() < 2)
        tokens.resize(current_first_token - (current_first_token > 1 ? 1 : 0));
      while (!tokens.empty() && tokens.back().kind == TokenKind::MOS) tokens.pop_back();
      result.truncated = true;
      result.log.push_back({static_cast<int>(tokens.size()), completed, "budget-truncated",
                            "token budget reached"});
      break;
    }
    const int step = static_cast<int>(tokens.size());
    const CascadeLogits greedy = decode_cascaded(f, weights);

    if (greedy.eos > 0.0) {
      const int cards_if_stop = completed + (current.size() >= 2 ? 1 : 0);
      if (current.size() >= 2 && cards_if_stop > cfg.min_cards_for_eos) {
        tokens.push_back(HairToken::eos());
        finished = true;
        continue;
      }
      result.log.push_back({step, completed, "eos-suppressed",
                            current.size() >= 2
                                ? "card count " + std::to_string(cards_if_stop) + " <= " +
                                      std::to_string(cfg.min_cards_for_eos)
                                : "open card has fewer than 2 points"});
    }
    if (greedy.mos > 0.0) {
      if (current.size() >= 2) {
        close_card();
        emit_mos_if_room();
        continue;
      }
      result.log.push_back(
          {step, completed, "mos-suppressed", "segment shorter than 2 points"});
    }

    int px = sample_category(greedy.pos.row(0).transpose(), cfg, rng);
    int py = sample_category(greedy.pos.row(1).transpose(), cfg, rng);
    int pz = sample_category(greedy.pos.row(2).transpose(), cfg, rng);
    if (current.empty() && cfg.enable_root_verification) {
      const RootDecision rd = verify_root(px, py, pz, greedy.pos, kd, scheme, cfg);
      if (rd.corrected) {
        result.log.push_back({step, completed, "root-corrected",
                              "nearest-neighbor distance now " + fmt(rd.distance)});
        px = rd.px;
        py = rd.py;
        pz = rd.pz;
      }
    }
    TokenizedPoint tp{px, py, pz, 0, 0};
    tp.tw = sample_category(decode_cascaded(f, weights, tp).width, cfg, rng);
    tp.tt = sample_category(decode_cascaded(f, weights, tp).thickness, cfg, rng);

    const Vec3 pos = dequantize_position(px, py, pz, scheme);
    double deviation = 0.0;
    if (cfg.enable_coherence_check && !coherence_check(current, pos, cfg, &deviation)) {
      result.log.push_back(
          {step, completed, "mos-substituted", "spline deviation " + fmt(deviation)});
      close_card();
      emit_mos_if_room();
      continue;
    }

    current.push_back(pos);
    emit(HairToken::pt(tp));
    if (static_cast<int>(current.size()) >= cfg.hard_card_cap) {
      result.log.push_back({static_cast<int>(tokens.size()), completed, "hard-cap",
                            "card terminated at " + std::to_string(current.size()) +
                                " points"});
      close_card();
      emit_mos_if_room();
    }
  }

  if (result.truncated) tokens.push_back(HairToken::eos());

  result.style = parse_sequence(result.sequence, scheme);
  if (cfg.enable_length_normalization) {
    for (std::size_t i = 0; i < result.style.cards.size(); ++i) {
      const std::size_t before = result.style.cards[i].points.size();
      if (static_cast<int>(before) <= cfg.soft_card_cap) continue;
      result.style.cards[i] = normalize_length(result.style.cards[i], cfg);
      result.log.push_back({static_cast<int>(tokens.size()), static_cast<int>(i), "resampled",
                            std::to_string(before) + " -> " +
                                std::to_string(result.style.cards[i].points.size()) +
                                " points"});
    }
  }
  return result;
}

}  // namespace charm
