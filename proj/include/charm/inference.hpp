#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "charm/metrics.hpp"
#include "charm/model.hpp"
#include "charm/sequence.hpp"
#include "charm/tokenizer.hpp"
#include "charm/types.hpp"

namespace charm {

enum class SamplingMode { Greedy, TopK };

struct InferenceConfig {
  SamplingMode sampling = SamplingMode::Greedy;
  int top_k = 5;
  double temperature = 1.0;
  double spline_threshold = 0.03;
  int spline_min_index = 6;  // 1-based index of the first checked point
  double root_threshold = 0.03;
  int root_alternatives = 10;
  int min_cards_for_eos = 10;
  int soft_card_cap = 80;
  int hard_card_cap = 100;
  bool enable_coherence_check = true;
  bool enable_root_verification = true;
  bool enable_length_normalization = true;
  std::uint64_t seed = 0;

  void validate() const;  // thresholds > 0, soft cap < hard cap
};

struct GenerationLogEntry {
  int step = 0;  // prefix length when the event fired
  int card = 0;
  std::string action;
  std::string detail;
};

std::string log_to_jsonl(const std::vector<GenerationLogEntry>& log);

struct GenerationResult {
  Hairstyle style;
  HairSequence sequence;
  std::vector<GenerationLogEntry> log;
  bool truncated = false;
};

// True when the candidate continues the card within the spline bound (or
// is early enough to be exempt). `deviation` receives the distance to the
// one-step extrapolation when the spline was evaluated.
bool coherence_check(const std::vector<Vec3>& accepted, const Vec3& candidate,
                     const InferenceConfig& cfg, double* deviation = nullptr);

// Corrects a card's first position when it lands farther than
// root_threshold from the condition cloud: the top root_alternatives
// axis-token combinations by probability product are tried in order and
// the first within threshold wins, else the closest one. pos_logits is
// 3 x pos_vocab.
struct RootDecision {
  int px = 0, py = 0, pz = 0;
  bool corrected = false;
  double distance = 0.0;  // nearest-neighbor distance of the final choice
};
RootDecision verify_root(int px, int py, int pz, const Eigen::MatrixXd& pos_logits,
                         const KdTree& cloud_index, const PiecewiseScheme& scheme,
                         const InferenceConfig& cfg);

// Cards above soft_card_cap points are spline-resampled down to it.
HairCard normalize_length(const HairCard& card, const InferenceConfig& cfg);

GenerationResult generate(const PointCloud& condition, const ModelWeights& weights,
                          const PiecewiseScheme& scheme, const InferenceConfig& cfg);

}  // namespace charm
