#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "charm/model.hpp"
#include "doctest.h"

using namespace charm;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.attr_embed_dim = 4;
  cfg.pos_vocab = 12;
  cfg.width_vocab = 10;
  cfg.thickness_vocab = 10;
  cfg.max_tokens = 64;
  cfg.condition_tokens = 4;
  cfg.point_feature_dim = 8;
  cfg.seed = 7;
  return cfg;
}

PointCloud make_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    cloud.points.emplace_back(u(rng), u(rng), u(rng));
    Vec3 nrm(u(rng), u(rng), u(rng));
    if (nrm.norm() < 1e-6) nrm = Vec3(0, 1, 0);
    cloud.normals.push_back(nrm.normalized());
  }
  return cloud;
}

HairSequence make_seq(const ModelConfig& cfg, std::uint64_t seed, int cards, int pts) {
  std::mt19937_64 rng(seed);
  HairSequence seq;
  seq.tokens.push_back(HairToken::sos());
  for (int c = 0; c < cards; ++c) {
    if (c > 0) seq.tokens.push_back(HairToken::mos());
    for (int p = 0; p < pts; ++p) {
      TokenizedPoint tp;
      tp.px = static_cast<int>(rng() % cfg.pos_vocab);
      tp.py = static_cast<int>(rng() % cfg.pos_vocab);
      tp.pz = static_cast<int>(rng() % cfg.pos_vocab);
      tp.tw = static_cast<int>(rng() % cfg.width_vocab);
      tp.tt = static_cast<int>(rng() % cfg.thickness_vocab);
      seq.tokens.push_back(HairToken::pt(tp));
    }
  }
  seq.tokens.push_back(HairToken::eos());
  return seq;
}

std::vector<TrainingItem> tiny_batch(const ModelConfig& cfg) {
  std::vector<TrainingItem> batch;
  batch.push_back({make_cloud(14, 1), make_seq(cfg, 11, 2, 2)});
  batch.push_back({make_cloud(10, 2), make_seq(cfg, 12, 1, 3)});
  return batch;
}

ModelWeights zero_weights(const ModelConfig& cfg) {
  ModelWeights w;
  w.config = cfg;
  for (const auto& [name, shape] : parameter_shapes(cfg))
    w.tensors.emplace(name, Eigen::MatrixXd::Zero(shape.first, shape.second));
  return w;
}

}  // namespace

TEST_CASE("parameter shapes and initialization") {
  const ModelConfig cfg = tiny_config();
  const auto shapes = parameter_shapes(cfg);
  CHECK(shapes.at("embed.e_px") == std::pair<int, int>{12, 4});
  CHECK(shapes.at("embed.proj_w") == std::pair<int, int>{16, 20});
  CHECK(shapes.at("head_p.w2") == std::pair<int, int>{36, 16});
  CHECK(shapes.at("head_w.w1") == std::pair<int, int>{16, 28});
  CHECK(shapes.at("head_t.w1") == std::pair<int, int>{16, 32});
  CHECK(shapes.at("layer1.mlp_w1") == std::pair<int, int>{64, 16});
  CHECK(shapes.count("layer2.ln1_g") == 0);

  const ModelWeights w = init_weights(cfg);
  CHECK(w.tensors.size() == shapes.size());
  CHECK(w.at("layer0.ln1_g").isOnes());
  CHECK(w.at("final.ln_g").isOnes());
  CHECK(w.at("layer0.attn_bq").isZero());
  CHECK(w.at("embed.proj_b").isZero());
  CHECK(w.at("head_p.b2").isZero());
  CHECK(w.at("embed.proj_w").norm() > 0.0);
  CHECK(std::abs(w.at("embed.proj_w").maxCoeff()) < 0.2);

  const ModelWeights w2 = init_weights(cfg);
  CHECK(w.at("embed.proj_w") == w2.at("embed.proj_w"));
  ModelConfig other = cfg;
  other.seed = 8;
  CHECK(init_weights(other).at("embed.proj_w") != w.at("embed.proj_w"));

  ModelConfig bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(parameter_shapes(bad), ValueError);
}

TEST_CASE("embed_point shape and range checks") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  TokenizedPoint tp{3, 5, 7, 2, 4};
  const Eigen::VectorXd e = embed_point(tp, w);
  CHECK(e.size() == cfg.hidden);
  TokenizedPoint bad = tp;
  bad.px = cfg.pos_vocab;
  CHECK_THROWS_AS(embed_point(bad, w), ValueError);
  bad = tp;
  bad.tw = -1;
  CHECK_THROWS_AS(embed_point(bad, w), ValueError);
}

TEST_CASE("condition encoder is permutation and duplication invariant") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const PointCloud cloud = make_cloud(30, 5);
  const Eigen::MatrixXd base = encode_condition(cloud, w).tokens;
  CHECK(base.rows() == cfg.condition_tokens);
  CHECK(base.cols() == cfg.hidden);

  PointCloud shuffled = cloud;
  std::mt19937_64 rng(9);
  std::vector<int> perm(cloud.points.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.points[i] = cloud.points[perm[i]];
    shuffled.normals[i] = cloud.normals[perm[i]];
  }
  CHECK((encode_condition(shuffled, w).tokens - base).cwiseAbs().maxCoeff() < 1e-13);

  PointCloud doubled = cloud;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    doubled.points.push_back(cloud.points[i]);
    doubled.normals.push_back(cloud.normals[i]);
  }
  CHECK((encode_condition(doubled, w).tokens - base).cwiseAbs().maxCoeff() < 1e-13);

  PointCloud small = make_cloud(cfg.condition_tokens - 1, 6);
  CHECK_THROWS_AS(encode_condition(small, w), ValueError);
}

TEST_CASE("forward shapes, causality, budget") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const auto cond = encode_condition(make_cloud(12, 3), w);
  const HairSequence seq = make_seq(cfg, 21, 2, 3);
  std::vector<HairToken> prefix(seq.tokens.begin(), seq.tokens.end() - 1);

  const Eigen::MatrixXd f = forward(cond, prefix, w);
  CHECK(f.rows() == static_cast<Eigen::Index>(prefix.size()));
  CHECK(f.cols() == cfg.hidden);

  std::vector<HairToken> tweaked = prefix;
  tweaked.back().point.px = (tweaked.back().point.px + 1) % cfg.pos_vocab;
  const Eigen::MatrixXd f2 = forward(cond, tweaked, w);
  const Eigen::Index last = f.rows() - 1;
  CHECK(f.topRows(last) == f2.topRows(last));
  CHECK((f.row(last) - f2.row(last)).norm() > 1e-8);

  std::vector<HairToken> with_eos = prefix;
  with_eos.push_back(HairToken::eos());
  CHECK_THROWS_AS(forward(cond, with_eos, w), ValueError);

  std::vector<HairToken> huge(cfg.max_tokens - cfg.condition_tokens + 1, HairToken::mos());
  huge.front() = HairToken::sos();
  CHECK_THROWS_AS(forward(cond, huge, w), BudgetError);
}

TEST_CASE("incremental decoder matches the full forward pass") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const auto cond = encode_condition(make_cloud(12, 3), w);
  const HairSequence seq = make_seq(cfg, 77, 2, 4);
  std::vector<HairToken> prefix(seq.tokens.begin(), seq.tokens.end() - 1);

  const Eigen::MatrixXd full = forward(cond, prefix, w);
  DecoderState st = init_decoder(cond, w);
  for (std::size_t j = 0; j < prefix.size(); ++j) {
    const Eigen::VectorXd f = decoder_append(st, prefix[j], w);
    CHECK((f.transpose() - full.row(static_cast<Eigen::Index>(j))).cwiseAbs().maxCoeff() <
          1e-10);
  }
  CHECK_THROWS_AS(decoder_append(st, HairToken::eos(), w), ValueError);

  DecoderState tight = init_decoder(cond, w);
  for (int i = 0; i < cfg.max_tokens - cfg.condition_tokens; ++i)
    decoder_append(tight, HairToken::mos(), w);
  CHECK_THROWS_AS(decoder_append(tight, HairToken::mos(), w), BudgetError);
}

TEST_CASE("cascade logits depend on the fed-back position and width") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(cfg.hidden, -0.5, 0.5);

  const CascadeLogits free_run = decode_cascaded(f, w);
  CHECK(free_run.pos.rows() == 3);
  CHECK(free_run.pos.cols() == cfg.pos_vocab);
  CHECK(free_run.width.size() == cfg.width_vocab);
  CHECK(free_run.thickness.size() == cfg.thickness_vocab);

  int px, py, pz, tw;
  free_run.pos.row(0).maxCoeff(&px);
  free_run.pos.row(1).maxCoeff(&py);
  free_run.pos.row(2).maxCoeff(&pz);
  free_run.width.maxCoeff(&tw);
  TokenizedPoint greedy{px, py, pz, tw, 0};
  const CascadeLogits forced = decode_cascaded(f, w, greedy);
  CHECK((forced.width - free_run.width).norm() < 1e-13);
  CHECK((forced.thickness - free_run.thickness).norm() < 1e-13);

  TokenizedPoint other = greedy;
  other.px = (px + 1) % cfg.pos_vocab;
  const CascadeLogits shifted = decode_cascaded(f, w, other);
  CHECK((shifted.width - free_run.width).norm() > 1e-8);
  other = greedy;
  other.tw = (tw + 1) % cfg.width_vocab;
  CHECK((decode_cascaded(f, w, other).thickness - free_run.thickness).norm() > 1e-8);
}

TEST_CASE("zero weights give uniform-prediction losses") {
  ModelConfig cfg = tiny_config();
  cfg.pos_vocab = 512;
  cfg.width_vocab = 128;
  cfg.thickness_vocab = 128;
  const ModelWeights w = zero_weights(cfg);

  std::vector<TrainingItem> batch;
  batch.push_back({make_cloud(12, 4), make_seq(cfg, 31, 2, 3)});
  const LossBreakdown lb = loss(batch, w);
  CHECK(lb.ce_pos == doctest::Approx(std::log(512.0)).epsilon(1e-12));
  CHECK(lb.ce_width == doctest::Approx(std::log(128.0)).epsilon(1e-12));
  CHECK(lb.ce_thickness == doctest::Approx(std::log(128.0)).epsilon(1e-12));
  CHECK(lb.bce_mos == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(lb.bce_eos == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(lb.total == doctest::Approx(lb.ce_pos + lb.ce_width + lb.ce_thickness + lb.bce_mos +
                                    lb.bce_eos));
}

TEST_CASE("saturating the correct classes drives cross-entropies to zero") {
  const ModelConfig cfg = tiny_config();
  ModelWeights w = zero_weights(cfg);
  const TokenizedPoint tp{3, 5, 7, 2, 4};
  w.at("head_p.b2")(3, 0) = 60.0;
  w.at("head_p.b2")(cfg.pos_vocab + 5, 0) = 60.0;
  w.at("head_p.b2")(2 * cfg.pos_vocab + 7, 0) = 60.0;
  w.at("head_w.b2")(2, 0) = 60.0;
  w.at("head_t.b2")(4, 0) = 60.0;

  HairSequence seq;
  seq.tokens = {HairToken::sos(), HairToken::pt(tp), HairToken::pt(tp), HairToken::pt(tp),
                HairToken::eos()};
  std::vector<TrainingItem> batch{{make_cloud(10, 8), seq}};
  const LossBreakdown lb = loss(batch, w);
  CHECK(lb.ce_pos < 1e-10);
  CHECK(lb.ce_width < 1e-10);
  CHECK(lb.ce_thickness < 1e-10);
  CHECK(lb.bce_mos == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const Accuracy acc = evaluate_accuracy(batch, w);
  CHECK(acc.point_targets == 3);
  CHECK(acc.position == 1.0);
  CHECK(acc.width == 1.0);
  CHECK(acc.thickness == 1.0);
}

TEST_CASE("loss rejects malformed sequences") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  HairSequence no_eos;
  no_eos.tokens = {HairToken::sos(), HairToken::pt({1, 1, 1, 1, 1})};
  CHECK_THROWS_AS(loss({{make_cloud(10, 1), no_eos}}, w), ValueError);
  HairSequence no_sos;
  no_sos.tokens = {HairToken::pt({1, 1, 1, 1, 1}), HairToken::eos()};
  CHECK_THROWS_AS(loss({{make_cloud(10, 1), no_sos}}, w), ValueError);
}

TEST_CASE("analytic gradients match finite differences on every tensor") {
  const ModelConfig cfg = tiny_config();
  ModelWeights w = init_weights(cfg);
  const std::vector<TrainingItem> batch = tiny_batch(cfg);

  LossBreakdown lb;
  const ParamMap grads = gradients(batch, w, &lb);
  CHECK(lb.total > 0.0);

  // h balances truncation against cancellation noise in the ~20-unit loss
  const double h = 1e-4;
  double worst = 0.0;
  for (const auto& [name, tensor] : w.tensors) {
    const Eigen::Index size = tensor.size();
    const Eigen::Index stride = std::max<Eigen::Index>(1, size / 20);
    for (Eigen::Index flat = 0; flat < size; flat += stride) {
      double* cell = w.at(name).data() + flat;
      const double saved = *cell;
      *cell = saved + h;
      const double lp = loss(batch, w).total;
      *cell = saved - h;
      const double lm = loss(batch, w).total;
      *cell = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = grads.at(name).data()[flat];
      const double rel =
          std::abs(fd - an) / std::max(1e-5, std::max(std::abs(fd), std::abs(an)));
      worst = std::max(worst, rel);
      if (rel >= 1e-4) {
        CAPTURE(name);
        CAPTURE(flat);
        CHECK(rel < 1e-4);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradients of a duplicated batch are unchanged") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const std::vector<TrainingItem> batch = tiny_batch(cfg);
  std::vector<TrainingItem> doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());

  LossBreakdown a, b;
  const ParamMap g1 = gradients(batch, w, &a);
  const ParamMap g2 = gradients(doubled, w, &b);
  CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
  double diff = 0.0;
  for (const auto& [name, g] : g1) diff = std::max(diff, (g - g2.at(name)).cwiseAbs().maxCoeff());
  CHECK(diff < 1e-12);
}

TEST_CASE("training reduces loss and is deterministic per seed") {
  const ModelConfig cfg = tiny_config();
  std::vector<TrainingItem> data;
  data.push_back({make_cloud(12, 41), make_seq(cfg, 51, 1, 3)});
  data.push_back({make_cloud(12, 42), make_seq(cfg, 52, 2, 2)});

  TrainConfig tcfg;
  tcfg.epochs = 40;
  tcfg.lr = 3e-3;
  tcfg.batch_size = 2;
  tcfg.seed = 1;
  const TrainResult r1 = train(data, cfg, tcfg);
  CHECK(!r1.loss_curve.empty());
  CHECK(r1.loss_curve.back() < 0.5 * r1.loss_curve.front());
  for (double v : r1.loss_curve) CHECK(std::isfinite(v));

  const TrainResult r2 = train(data, cfg, tcfg);
  CHECK(r1.loss_curve == r2.loss_curve);
  CHECK(r1.weights.at("embed.proj_w") == r2.weights.at("embed.proj_w"));

  TrainConfig frozen = tcfg;
  frozen.epochs = 3;
  frozen.lr = 0.0;
  const TrainResult r3 = train(data, cfg, frozen);
  const ModelWeights fresh = init_weights(cfg);
  for (const auto& [name, tensor] : fresh.tensors)
    CHECK(tensor == r3.weights.at(name));

  // resuming with carried optimizer state reproduces one uninterrupted run
  TrainConfig half = tcfg;
  half.epochs = 20;
  const TrainResult a = train(data, cfg, half);
  CHECK(a.opt.step == static_cast<long>(a.loss_curve.size()));
  TrainConfig second = half;
  second.seed = 777;
  const TrainResult b = train(data, cfg, second, &a.weights, &a.opt);
  CHECK(b.opt.step == static_cast<long>(2 * a.loss_curve.size()));
  const TrainResult fresh_resume = train(data, cfg, second, &a.weights);
  CHECK(b.weights.at("embed.proj_w") != fresh_resume.weights.at("embed.proj_w"));
}

TEST_CASE("weight archive roundtrip") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "charm_model_archive";
  std::filesystem::remove_all(dir);
  save_weights(w, dir.string());
  const ModelWeights r = load_weights(dir.string());

  CHECK(r.config.to_json() == cfg.to_json());
  double diff = 0.0;
  for (const auto& [name, tensor] : w.tensors)
    diff = std::max(diff, (tensor - r.at(name)).cwiseAbs().maxCoeff());
  CHECK(diff < 1e-8);  // float-32 storage
  CHECK(diff > 0.0);

  save_weights(r, dir.string());
  const ModelWeights r2 = load_weights(dir.string());
  for (const auto& [name, tensor] : r.tensors) CHECK(tensor == r2.at(name));

  const auto cond = encode_condition(make_cloud(10, 2), r);
  const HairSequence seq = make_seq(cfg, 61, 1, 2);
  std::vector<HairToken> prefix(seq.tokens.begin(), seq.tokens.end() - 1);
  CHECK(forward(cond, prefix, r) == forward(cond, prefix, r2));

  CHECK_THROWS_AS(load_weights((dir / "missing").string()), ParseError);
  std::filesystem::remove_all(dir);

  const auto curve_path = std::filesystem::temp_directory_path() / "charm_curve.csv";
  save_loss_curve({1.5, 0.75}, curve_path.string());
  std::ifstream in(curve_path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,loss");
  std::filesystem::remove(curve_path);
}
