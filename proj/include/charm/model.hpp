#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "charm/metrics.hpp"
#include "charm/sequence.hpp"
#include "charm/tokenizer.hpp"
#include "charm/types.hpp"

namespace charm {

struct ModelConfig {
  int layers = 4;
  int hidden = 128;
  int heads = 4;
  int attr_embed_dim = 16;
  int pos_vocab = 512;
  int width_vocab = 128;
  int thickness_vocab = 128;
  int max_tokens = 8192;
  int condition_tokens = 16;    // K
  int point_feature_dim = 64;   // per-point feature width in the condition encoder
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

using ParamMap = std::map<std::string, Eigen::MatrixXd>;

struct ModelWeights {
  ModelConfig config;
  ParamMap tensors;

  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
};

// name -> (rows, cols) of every parameter tensor for a config
std::map<std::string, std::pair<int, int>> parameter_shapes(const ModelConfig& cfg);

// small-normal initialization, deterministic per cfg.seed
ModelWeights init_weights(const ModelConfig& cfg);

struct ConditionTokens {
  Eigen::MatrixXd tokens;  // K x hidden
};

Eigen::VectorXd embed_point(const TokenizedPoint& tp, const ModelWeights& weights);

ConditionTokens encode_condition(const PointCloud& cloud, const ModelWeights& weights);

// Features for the prefix [SOS, x_1 .. x_T]: one row per prefix token,
// causal over [condition tokens; prefix]. EOS may not appear in a
// prefix; exceeding max_tokens is a budget error.
Eigen::MatrixXd forward(const ConditionTokens& condition, const std::vector<HairToken>& prefix,
                        const ModelWeights& weights);

// Incremental decoding cache; feature rows agree with forward() to
// floating-point associativity. One state serves one generation.
struct DecoderState {
  std::vector<Eigen::MatrixXd> k_cache, v_cache;  // per layer, max_tokens x hidden
  int length = 0;
};

DecoderState init_decoder(const ConditionTokens& condition, const ModelWeights& weights);

// Appends one prefix token and returns its feature row.
Eigen::VectorXd decoder_append(DecoderState& state, const HairToken& token,
                               const ModelWeights& weights);

struct CascadeLogits {
  Eigen::MatrixXd pos;        // 3 x pos_vocab
  Eigen::VectorXd width;      // width_vocab
  Eigen::VectorXd thickness;  // thickness_vocab
  double mos = 0.0, eos = 0.0;
};

// Width logits consume the embedded position (teacher-forced when given,
// argmax of the position logits otherwise); thickness logits consume the
// embedded position and width.
CascadeLogits decode_cascaded(const Eigen::VectorXd& f, const ModelWeights& weights,
                              const std::optional<TokenizedPoint>& teacher = std::nullopt);

struct LossBreakdown {
  double ce_pos = 0.0, ce_width = 0.0, ce_thickness = 0.0;
  double bce_mos = 0.0, bce_eos = 0.0;
  double total = 0.0;
};

struct TrainingItem {
  PointCloud cloud;
  HairSequence seq;
};

// One item per style: condition cloud sampled from the reconstructed
// surface (seed + index), sequence built with the given ordering.
std::vector<TrainingItem> build_training_items(const std::vector<Hairstyle>& styles,
                                               const PiecewiseScheme& scheme, OrderingMode mode,
                                               std::size_t cloud_points, std::uint64_t seed);

LossBreakdown loss(const std::vector<TrainingItem>& batch, const ModelWeights& weights);

// Exact analytic gradients of loss; `out` receives the breakdown when set.
ParamMap gradients(const std::vector<TrainingItem>& batch, const ModelWeights& weights,
                   LossBreakdown* out = nullptr);

// Teacher-forced next-token accuracies over a set of items.
struct Accuracy {
  double position = 0.0, width = 0.0, thickness = 0.0;
  std::size_t point_targets = 0;
};
Accuracy evaluate_accuracy(const std::vector<TrainingItem>& items, const ModelWeights& weights);

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 8;
  int accum_steps = 1;
  double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
  std::uint64_t seed = 0;
  bool verbose = false;
};

// Adam moments; pass back in to continue a run without a warm-up
// transient (a fresh state resets the step count and both moments).
struct OptimizerState {
  ParamMap m, v;
  long step = 0;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<double> loss_curve;  // total loss per optimizer step
  OptimizerState opt;
};

// Starts from `init` when given, else from init_weights(mcfg).
TrainResult train(const std::vector<TrainingItem>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const ModelWeights* init = nullptr,
                  const OptimizerState* opt = nullptr);

// Archive: manifest.json (config + tensor table) plus one raw
// little-endian float-32 file per tensor.
void save_weights(const ModelWeights& weights, const std::string& dir);
ModelWeights load_weights(const std::string& dir);

void save_loss_curve(const std::vector<double>& curve, const std::string& path);

}  // namespace charm
