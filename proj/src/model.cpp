#include "charm/model.hpp"

#include "charm/card_mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace charm {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

Eigen::MatrixXd gelu_mat(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return gelu(v); });
}

Eigen::MatrixXd gelu_grad_mat(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return gelu_grad(v); });
}

struct LnTape {
  Eigen::MatrixXd xhat;  // rows normalized
  Eigen::VectorXd rstd;
};

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                           const Eigen::MatrixXd& b, LnTape* tape) {
  const auto n = x.rows();
  const auto h = x.cols();
  Eigen::MatrixXd out(n, h);
  Eigen::MatrixXd xhat(n, h);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double r = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * r;
    out.row(i) = xhat.row(i).cwiseProduct(g.col(0).transpose()) + b.col(0).transpose();
    rstd(i) = r;
  }
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->rstd = std::move(rstd);
  }
  return out;
}

// returns dX; accumulates into dg/db
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const LnTape& tape,
                                    const Eigen::MatrixXd& g, Eigen::MatrixXd& dg,
                                    Eigen::MatrixXd& db) {
  const auto n = dy.rows();
  const auto h = dy.cols();
  Eigen::MatrixXd dx(n, h);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(g.col(0).transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(tape.xhat.row(i)).mean();
    dx.row(i) =
        tape.rstd(i) * (dxhat.array() - m1 - tape.xhat.row(i).array() * m2).matrix();
  }
  dg.col(0) += dy.cwiseProduct(tape.xhat).colwise().sum().transpose();
  db.col(0) += dy.colwise().sum().transpose();
  return dx;
}

struct LayerTape {
  LnTape ln1, ln2;
  Eigen::MatrixXd n1, q, k, v, attn_concat, y, x2, n2, h1, g1, x3;
  std::vector<Eigen::MatrixXd> probs;  // per head, S x S lower-triangular rows
};

struct SeqTape {
  Eigen::MatrixXd x0;
  std::vector<LayerTape> layers;
  LnTape lnf;
  Eigen::MatrixXd features;  // full S x h after final norm
};

struct CondTape {
  Eigen::MatrixXd input;  // n x 6
  Eigen::MatrixXd a1;     // n x P pre-activation
  Eigen::MatrixXd feat;   // n x P
  std::vector<std::vector<int>> groups;
  Eigen::MatrixXi argmax;  // K x P, point index providing each max
  Eigen::MatrixXd pooled;  // K x P
};

// farthest-point grouping with position-lexicographic tie-breaks, so the
// result depends only on the point set, not its order
std::vector<std::vector<int>> fps_groups(const std::vector<Vec3>& pts, int k) {
  const int n = static_cast<int>(pts.size());
  auto lex_less = [&](int a, int b) {
    const Vec3 &p = pts[a], &q = pts[b];
    if (p.x() != q.x()) return p.x() < q.x();
    if (p.y() != q.y()) return p.y() < q.y();
    return p.z() < q.z();
  };
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= n;

  std::vector<int> centers;
  std::vector<double> dist(n);
  {
    int best = 0;
    for (int i = 0; i < n; ++i) {
      dist[i] = (pts[i] - centroid).squaredNorm();
      if (dist[i] > dist[best] + 0.0 ||
          (dist[i] == dist[best] && lex_less(i, best)))
        best = i;
    }
    centers.push_back(best);
  }
  std::vector<double> min_d(n);
  for (int i = 0; i < n; ++i) min_d[i] = (pts[i] - pts[centers[0]]).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (min_d[i] > min_d[best] || (min_d[i] == min_d[best] && lex_less(i, best))) best = i;
    centers.push_back(best);
    for (int i = 0; i < n; ++i)
      min_d[i] = std::min(min_d[i], (pts[i] - pts[best]).squaredNorm());
  }

  std::vector<std::vector<int>> groups(k);
  for (int i = 0; i < n; ++i) {
    int gi = 0;
    double gd = (pts[i] - pts[centers[0]]).squaredNorm();
    for (int c = 1; c < k; ++c) {
      const double d = (pts[i] - pts[centers[c]]).squaredNorm();
      if (d < gd) {
        gd = d;
        gi = c;
      }
    }
    groups[gi].push_back(i);
  }
  return groups;
}

Eigen::MatrixXd encode_condition_impl(const PointCloud& cloud, const ModelWeights& w,
                                      CondTape* tape) {
  const auto& cfg = w.config;
  const int k = cfg.condition_tokens;
  const int p = cfg.point_feature_dim;
  const int n = static_cast<int>(cloud.points.size());
  if (n < k) throw ValueError("encode_condition: fewer points than condition tokens");

  Eigen::MatrixXd input(n, 6);
  const bool has_normals = cloud.normals.size() == cloud.points.size();
  for (int i = 0; i < n; ++i) {
    input.row(i).head<3>() = cloud.points[i].transpose();
    if (has_normals)
      input.row(i).tail<3>() = cloud.normals[i].transpose();
    else
      input.row(i).tail<3>().setZero();
  }
  Eigen::MatrixXd a1 = input * w.at("cond.mlp_w1").transpose();
  a1.rowwise() += w.at("cond.mlp_b1").col(0).transpose();
  Eigen::MatrixXd feat = gelu_mat(a1) * w.at("cond.mlp_w2").transpose();
  feat.rowwise() += w.at("cond.mlp_b2").col(0).transpose();

  const auto groups = fps_groups(cloud.points, k);
  Eigen::MatrixXd pooled(k, p);
  Eigen::MatrixXi argmax(k, p);
  for (int g = 0; g < k; ++g) {
    if (groups[g].empty()) {
      pooled.row(g).setZero();
      argmax.row(g).setConstant(-1);
      continue;
    }
    for (int d = 0; d < p; ++d) {
      int bi = groups[g][0];
      for (int idx : groups[g])
        if (feat(idx, d) > feat(bi, d)) bi = idx;
      pooled(g, d) = feat(bi, d);
      argmax(g, d) = bi;
    }
  }
  Eigen::MatrixXd tokens = pooled * w.at("cond.proj_w").transpose();
  tokens.rowwise() += w.at("cond.proj_b").col(0).transpose();
  tokens += w.at("cond.group_embed");

  if (tape) {
    tape->input = std::move(input);
    tape->a1 = std::move(a1);
    tape->feat = std::move(feat);
    tape->groups = groups;
    tape->argmax = std::move(argmax);
    tape->pooled = std::move(pooled);
  }
  return tokens;
}

void encode_condition_backward(const Eigen::MatrixXd& dtokens, const CondTape& tape,
                               const ModelWeights& w, ParamMap& grads) {
  grads["cond.group_embed"] += dtokens;
  grads["cond.proj_b"].col(0) += dtokens.colwise().sum().transpose();
  grads["cond.proj_w"] += dtokens.transpose() * tape.pooled;
  const Eigen::MatrixXd dpooled = dtokens * w.at("cond.proj_w");

  Eigen::MatrixXd dfeat = Eigen::MatrixXd::Zero(tape.feat.rows(), tape.feat.cols());
  for (Eigen::Index g = 0; g < dpooled.rows(); ++g)
    for (Eigen::Index d = 0; d < dpooled.cols(); ++d) {
      const int idx = tape.argmax(g, d);
      if (idx >= 0) dfeat(idx, d) += dpooled(g, d);
    }

  grads["cond.mlp_b2"].col(0) += dfeat.colwise().sum().transpose();
  const Eigen::MatrixXd ga1 = gelu_mat(tape.a1);
  grads["cond.mlp_w2"] += dfeat.transpose() * ga1;
  const Eigen::MatrixXd da1 =
      (dfeat * w.at("cond.mlp_w2")).cwiseProduct(gelu_grad_mat(tape.a1));
  grads["cond.mlp_b1"].col(0) += da1.colwise().sum().transpose();
  grads["cond.mlp_w1"] += da1.transpose() * tape.input;
}

Eigen::VectorXd point_concat(const TokenizedPoint& tp, const ModelWeights& w) {
  const int a = w.config.attr_embed_dim;
  Eigen::VectorXd cat(5 * a);
  cat.segment(0, a) = w.at("embed.e_px").row(tp.px).transpose();
  cat.segment(a, a) = w.at("embed.e_py").row(tp.py).transpose();
  cat.segment(2 * a, a) = w.at("embed.e_pz").row(tp.pz).transpose();
  cat.segment(3 * a, a) = w.at("embed.e_w").row(tp.tw).transpose();
  cat.segment(4 * a, a) = w.at("embed.e_t").row(tp.tt).transpose();
  return cat;
}

void check_point_range(const TokenizedPoint& tp, const ModelConfig& cfg) {
  if (tp.px < 0 || tp.px >= cfg.pos_vocab || tp.py < 0 || tp.py >= cfg.pos_vocab ||
      tp.pz < 0 || tp.pz >= cfg.pos_vocab || tp.tw < 0 || tp.tw >= cfg.width_vocab ||
      tp.tt < 0 || tp.tt >= cfg.thickness_vocab)
    throw ValueError("embed_point: token index out of range");
}

Eigen::MatrixXd assemble_input(const Eigen::MatrixXd& cond,
                               const std::vector<HairToken>& prefix, const ModelWeights& w,
                               std::vector<int>* point_rows) {
  const auto& cfg = w.config;
  const int k = cfg.condition_tokens;
  const int s = k + static_cast<int>(prefix.size());
  if (s > cfg.max_tokens) throw BudgetError("forward: sequence exceeds the token budget");

  Eigen::MatrixXd x(s, cfg.hidden);
  x.topRows(k) = cond;
  for (std::size_t j = 0; j < prefix.size(); ++j) {
    const auto& tok = prefix[j];
    const int row = k + static_cast<int>(j);
    switch (tok.kind) {
      case TokenKind::SOS:
        x.row(row) = w.at("embed.sos").col(0).transpose();
        break;
      case TokenKind::MOS:
        x.row(row) = w.at("embed.mos").col(0).transpose();
        break;
      case TokenKind::Point: {
        check_point_range(tok.point, cfg);
        x.row(row) = (w.at("embed.proj_w") * point_concat(tok.point, w) +
                      w.at("embed.proj_b").col(0))
                         .transpose();
        if (point_rows) point_rows->push_back(row);
        break;
      }
      case TokenKind::EOS:
        throw ValueError("forward: EOS cannot appear in a prefix");
    }
  }
  x += w.at("embed.position").topRows(s);
  return x;
}

std::string layer_name(int l, const char* suffix) {
  std::ostringstream os;
  os << "layer" << l << "." << suffix;
  return os.str();
}

Eigen::MatrixXd transformer_forward(Eigen::MatrixXd x, const ModelWeights& w, SeqTape* tape) {
  const auto& cfg = w.config;
  const int s = static_cast<int>(x.rows());
  const int h = cfg.hidden;
  const int nh = cfg.heads;
  const int dh = h / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (tape) {
    tape->x0 = x;
    tape->layers.resize(cfg.layers);
  }

  for (int l = 0; l < cfg.layers; ++l) {
    LayerTape local;
    LayerTape& t = tape ? tape->layers[l] : local;

    t.n1 = layer_norm(x, w.at(layer_name(l, "ln1_g")), w.at(layer_name(l, "ln1_b")), &t.ln1);
    t.q = t.n1 * w.at(layer_name(l, "attn_wq")).transpose();
    t.q.rowwise() += w.at(layer_name(l, "attn_bq")).col(0).transpose();
    t.k = t.n1 * w.at(layer_name(l, "attn_wk")).transpose();
    t.k.rowwise() += w.at(layer_name(l, "attn_bk")).col(0).transpose();
    t.v = t.n1 * w.at(layer_name(l, "attn_wv")).transpose();
    t.v.rowwise() += w.at(layer_name(l, "attn_bv")).col(0).transpose();

    t.attn_concat.resize(s, h);
    t.probs.assign(nh, Eigen::MatrixXd());
    for (int hd = 0; hd < nh; ++hd) {
      const auto qh = t.q.middleCols(hd * dh, dh);
      const auto kh = t.k.middleCols(hd * dh, dh);
      const auto vh = t.v.middleCols(hd * dh, dh);
      Eigen::MatrixXd scores = qh * kh.transpose() * scale;
      Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(s, s);
      for (int i = 0; i < s; ++i) {
        const double mx = scores.row(i).head(i + 1).maxCoeff();
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
          probs(i, j) = std::exp(scores(i, j) - mx);
          denom += probs(i, j);
        }
        probs.row(i).head(i + 1) /= denom;
      }
      t.attn_concat.middleCols(hd * dh, dh) = probs * vh;
      t.probs[hd] = std::move(probs);
    }
    t.y = t.attn_concat * w.at(layer_name(l, "attn_wo")).transpose();
    t.y.rowwise() += w.at(layer_name(l, "attn_bo")).col(0).transpose();
    t.x2 = x + t.y;

    t.n2 =
        layer_norm(t.x2, w.at(layer_name(l, "ln2_g")), w.at(layer_name(l, "ln2_b")), &t.ln2);
    t.h1 = t.n2 * w.at(layer_name(l, "mlp_w1")).transpose();
    t.h1.rowwise() += w.at(layer_name(l, "mlp_b1")).col(0).transpose();
    t.g1 = gelu_mat(t.h1);
    Eigen::MatrixXd m = t.g1 * w.at(layer_name(l, "mlp_w2")).transpose();
    m.rowwise() += w.at(layer_name(l, "mlp_b2")).col(0).transpose();
    t.x3 = t.x2 + m;
    x = t.x3;
  }

  LnTape lnf_local;
  LnTape& lnf = tape ? tape->lnf : lnf_local;
  Eigen::MatrixXd f = layer_norm(x, w.at("final.ln_g"), w.at("final.ln_b"), &lnf);
  if (tape) tape->features = f;
  return f;
}

// dF -> dX0, accumulating parameter gradients
Eigen::MatrixXd transformer_backward(const Eigen::MatrixXd& df, const SeqTape& tape,
                                     const ModelWeights& w, ParamMap& grads) {
  const auto& cfg = w.config;
  const int s = static_cast<int>(df.rows());
  const int h = cfg.hidden;
  const int nh = cfg.heads;
  const int dh = h / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd dx = layer_norm_backward(df, tape.lnf, w.at("final.ln_g"),
                                           grads["final.ln_g"], grads["final.ln_b"]);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerTape& t = tape.layers[l];

    // MLP branch
    const Eigen::MatrixXd& dm = dx;  // x3 = x2 + m
    grads[layer_name(l, "mlp_b2")].col(0) += dm.colwise().sum().transpose();
    grads[layer_name(l, "mlp_w2")] += dm.transpose() * t.g1;
    const Eigen::MatrixXd dh1 =
        (dm * w.at(layer_name(l, "mlp_w2"))).cwiseProduct(gelu_grad_mat(t.h1));
    grads[layer_name(l, "mlp_b1")].col(0) += dh1.colwise().sum().transpose();
    grads[layer_name(l, "mlp_w1")] += dh1.transpose() * t.n2;
    const Eigen::MatrixXd dn2 = dh1 * w.at(layer_name(l, "mlp_w1"));
    Eigen::MatrixXd dx2 = dx + layer_norm_backward(dn2, t.ln2, w.at(layer_name(l, "ln2_g")),
                                                   grads[layer_name(l, "ln2_g")],
                                                   grads[layer_name(l, "ln2_b")]);

    // attention branch: x2 = x + y
    const Eigen::MatrixXd& dy = dx2;
    grads[layer_name(l, "attn_bo")].col(0) += dy.colwise().sum().transpose();
    grads[layer_name(l, "attn_wo")] += dy.transpose() * t.attn_concat;
    const Eigen::MatrixXd dconcat = dy * w.at(layer_name(l, "attn_wo"));

    Eigen::MatrixXd dq(s, h), dk(s, h), dv(s, h);
    for (int hd = 0; hd < nh; ++hd) {
      const auto vh = t.v.middleCols(hd * dh, dh);
      const auto qh = t.q.middleCols(hd * dh, dh);
      const auto kh = t.k.middleCols(hd * dh, dh);
      const auto doh = dconcat.middleCols(hd * dh, dh);
      const Eigen::MatrixXd& probs = t.probs[hd];

      Eigen::MatrixXd dprobs = doh * vh.transpose();
      dv.middleCols(hd * dh, dh) = probs.transpose() * doh;

      Eigen::MatrixXd dscores(s, s);
      for (int i = 0; i < s; ++i) {
        const double dot = dprobs.row(i).head(i + 1).dot(probs.row(i).head(i + 1));
        dscores.row(i).setZero();
        for (int j = 0; j <= i; ++j)
          dscores(i, j) = probs(i, j) * (dprobs(i, j) - dot);
      }
      dq.middleCols(hd * dh, dh) = dscores * kh * scale;
      dk.middleCols(hd * dh, dh) = dscores.transpose() * qh * scale;
    }

    grads[layer_name(l, "attn_bq")].col(0) += dq.colwise().sum().transpose();
    grads[layer_name(l, "attn_bk")].col(0) += dk.colwise().sum().transpose();
    grads[layer_name(l, "attn_bv")].col(0) += dv.colwise().sum().transpose();
    grads[layer_name(l, "attn_wq")] += dq.transpose() * t.n1;
    grads[layer_name(l, "attn_wk")] += dk.transpose() * t.n1;
    grads[layer_name(l, "attn_wv")] += dv.transpose() * t.n1;
    const Eigen::MatrixXd dn1 = dq * w.at(layer_name(l, "attn_wq")) +
                                dk * w.at(layer_name(l, "attn_wk")) +
                                dv * w.at(layer_name(l, "attn_wv"));
    dx = dx2 + layer_norm_backward(dn1, t.ln1, w.at(layer_name(l, "ln1_g")),
                                   grads[layer_name(l, "ln1_g")],
                                   grads[layer_name(l, "ln1_b")]);
  }
  return dx;
}

double stable_bce(double logit, double target) {
  // -[y log sigmoid(x) + (1-y) log(1 - sigmoid(x))]
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

struct HeadCounts {
  std::size_t points = 0;
  std::size_t positions = 0;  // prefix positions (flag targets)
};

HeadCounts count_targets(const std::vector<TrainingItem>& batch) {
  HeadCounts c;
  for (const auto& item : batch) {
    const auto& toks = item.seq.tokens;
    if (toks.size() < 2 || toks.front().kind != TokenKind::SOS ||
        toks.back().kind != TokenKind::EOS)
      throw ValueError("loss: sequences must be SOS-started and EOS-terminated");
    c.positions += toks.size() - 1;
    for (std::size_t i = 1; i < toks.size(); ++i)
      if (toks[i].kind == TokenKind::Point) ++c.points;
  }
  return c;
}

struct MlpHeadTape {
  Eigen::VectorXd in, pre, act;
};

Eigen::VectorXd mlp_head_forward(const Eigen::VectorXd& in, const ModelWeights& w,
                                 const std::string& prefix, MlpHeadTape* tape) {
  Eigen::VectorXd pre = w.at(prefix + ".w1") * in + w.at(prefix + ".b1").col(0);
  Eigen::VectorXd act = pre.unaryExpr([](double v) { return gelu(v); });
  Eigen::VectorXd out = w.at(prefix + ".w2") * act + w.at(prefix + ".b2").col(0);
  if (tape) {
    tape->in = in;
    tape->pre = std::move(pre);
    tape->act = std::move(act);
  }
  return out;
}

// returns gradient w.r.t. the head input
Eigen::VectorXd mlp_head_backward(const Eigen::VectorXd& dout, const MlpHeadTape& tape,
                                  const ModelWeights& w, const std::string& prefix,
                                  ParamMap& grads) {
  grads[prefix + ".b2"].col(0) += dout;
  grads[prefix + ".w2"] += dout * tape.act.transpose();
  Eigen::VectorXd dact = w.at(prefix + ".w2").transpose() * dout;
  Eigen::VectorXd dpre =
      dact.cwiseProduct(tape.pre.unaryExpr([](double v) { return gelu_grad(v); }));
  grads[prefix + ".b1"].col(0) += dpre;
  grads[prefix + ".w1"] += dpre * tape.in.transpose();
  return w.at(prefix + ".w1").transpose() * dpre;
}

// softmax cross-entropy over one logit block; returns loss, writes dlogits
double softmax_ce(const Eigen::VectorXd& logits, int target, double grad_scale,
                  Eigen::VectorXd* dlogits) {
  const double mx = logits.maxCoeff();
  const Eigen::VectorXd ex = (logits.array() - mx).exp();
  const double z = ex.sum();
  if (dlogits) {
    *dlogits = ex / z * grad_scale;
    (*dlogits)(target) -= grad_scale;
  }
  return std::log(z) - (logits(target) - mx);
}

void run_batch(const std::vector<TrainingItem>& batch, const ModelWeights& w, ParamMap* grads,
               LossBreakdown& out) {
  const auto& cfg = w.config;
  const int a = cfg.attr_embed_dim;
  const int h = cfg.hidden;
  const HeadCounts counts = count_targets(batch);
  if (counts.positions == 0) throw ValueError("loss: empty batch");
  const double point_scale = counts.points ? 1.0 / static_cast<double>(counts.points) : 0.0;
  const double axis_scale = point_scale / 3.0;
  const double flag_scale = 1.0 / static_cast<double>(counts.positions);

  out = LossBreakdown{};

  for (const auto& item : batch) {
    const auto& toks = item.seq.tokens;
    const std::vector<HairToken> prefix(toks.begin(), toks.end() - 1);

    CondTape cond_tape;
    const Eigen::MatrixXd cond =
        encode_condition_impl(item.cloud, w, grads ? &cond_tape : nullptr);
    std::vector<int> point_rows;
    Eigen::MatrixXd x0 = assemble_input(cond, prefix, w, &point_rows);
    SeqTape tape;
    const Eigen::MatrixXd f = transformer_forward(x0, w, grads ? &tape : nullptr);
    const int k = cfg.condition_tokens;

    Eigen::MatrixXd dfull;
    if (grads) dfull = Eigen::MatrixXd::Zero(f.rows(), f.cols());

    for (std::size_t j = 0; j + 1 < toks.size(); ++j) {
      const Eigen::VectorXd fi = f.row(k + static_cast<int>(j)).transpose();
      const auto& target = toks[j + 1];
      Eigen::VectorXd dfi = Eigen::VectorXd::Zero(h);

      // termination flags at every position
      for (int head = 0; head < 2; ++head) {
        const std::string name = head == 0 ? "head_mos" : "head_eos";
        const double y = (head == 0 ? target.kind == TokenKind::MOS
                                    : target.kind == TokenKind::EOS)
                             ? 1.0
                             : 0.0;
        MlpHeadTape ht;
        const double logit = mlp_head_forward(fi, w, name, grads ? &ht : nullptr)(0);
        (head == 0 ? out.bce_mos : out.bce_eos) += stable_bce(logit, y) * flag_scale;
        if (grads) {
          const double p = 1.0 / (1.0 + std::exp(-logit));
          Eigen::VectorXd dlogit(1);
          dlogit(0) = (p - y) * flag_scale;
          dfi += mlp_head_backward(dlogit, ht, w, name, *grads);
        }
      }

      if (target.kind == TokenKind::Point) {
        const TokenizedPoint& tp = target.point;
        check_point_range(tp, cfg);
        const int axes[3] = {tp.px, tp.py, tp.pz};

        MlpHeadTape pt;
        const Eigen::VectorXd plogits = mlp_head_forward(fi, w, "head_p", grads ? &pt : nullptr);
        Eigen::VectorXd dplogits = Eigen::VectorXd::Zero(plogits.size());
        for (int ax = 0; ax < 3; ++ax) {
          Eigen::VectorXd dblock;
          const double ce = softmax_ce(plogits.segment(ax * cfg.pos_vocab, cfg.pos_vocab),
                                       axes[ax], axis_scale, grads ? &dblock : nullptr);
          out.ce_pos += ce * axis_scale;
          if (grads) dplogits.segment(ax * cfg.pos_vocab, cfg.pos_vocab) = dblock;
        }
        if (grads) dfi += mlp_head_backward(dplogits, pt, w, "head_p", *grads);

        // cascaded heads, teacher-forced
        Eigen::VectorXd pos_embed_cat(3 * a);
        pos_embed_cat.segment(0, a) = w.at("embed.e_px").row(tp.px).transpose();
        pos_embed_cat.segment(a, a) = w.at("embed.e_py").row(tp.py).transpose();
        pos_embed_cat.segment(2 * a, a) = w.at("embed.e_pz").row(tp.pz).transpose();

        Eigen::VectorXd win(h + 3 * a);
        win << fi, pos_embed_cat;
        MlpHeadTape wt;
        const Eigen::VectorXd wlogits = mlp_head_forward(win, w, "head_w", grads ? &wt : nullptr);
        Eigen::VectorXd dwlogits;
        out.ce_width +=
            softmax_ce(wlogits, tp.tw, point_scale, grads ? &dwlogits : nullptr) * point_scale;

        Eigen::VectorXd tin(h + 4 * a);
        tin << fi, pos_embed_cat, w.at("embed.e_w").row(tp.tw).transpose();
        MlpHeadTape tt;
        const Eigen::VectorXd tlogits = mlp_head_forward(tin, w, "head_t", grads ? &tt : nullptr);
        Eigen::VectorXd dtlogits;
        out.ce_thickness +=
            softmax_ce(tlogits, tp.tt, point_scale, grads ? &dtlogits : nullptr) * point_scale;

        if (grads) {
          const Eigen::VectorXd dwin = mlp_head_backward(dwlogits, wt, w, "head_w", *grads);
          const Eigen::VectorXd dtin = mlp_head_backward(dtlogits, tt, w, "head_t", *grads);
          dfi += dwin.head(h) + dtin.head(h);
          const Eigen::VectorXd dpos_cat = dwin.tail(3 * a) + dtin.segment(h, 3 * a);
          (*grads)["embed.e_px"].row(tp.px) += dpos_cat.segment(0, a).transpose();
          (*grads)["embed.e_py"].row(tp.py) += dpos_cat.segment(a, a).transpose();
          (*grads)["embed.e_pz"].row(tp.pz) += dpos_cat.segment(2 * a, a).transpose();
          (*grads)["embed.e_w"].row(tp.tw) += dtin.tail(a).transpose();
        }
      }

      if (grads) dfull.row(k + static_cast<int>(j)) = dfi.transpose();
    }

    if (!grads) continue;

    Eigen::MatrixXd dx0 = transformer_backward(dfull, tape, w, *grads);
    const int s = static_cast<int>(dx0.rows());
    (*grads)["embed.position"].topRows(s) += dx0;

    for (std::size_t j = 0; j < prefix.size(); ++j) {
      const int row = k + static_cast<int>(j);
      const Eigen::VectorXd drow = dx0.row(row).transpose();
      switch (prefix[j].kind) {
        case TokenKind::SOS:
          (*grads)["embed.sos"].col(0) += drow;
          break;
        case TokenKind::MOS:
          (*grads)["embed.mos"].col(0) += drow;
          break;
        case TokenKind::Point: {
          const TokenizedPoint& tp = prefix[j].point;
          (*grads)["embed.proj_b"].col(0) += drow;
          const Eigen::VectorXd cat = point_concat(tp, w);
          (*grads)["embed.proj_w"] += drow * cat.transpose();
          const Eigen::VectorXd dcat = w.at("embed.proj_w").transpose() * drow;
          (*grads)["embed.e_px"].row(tp.px) += dcat.segment(0, a).transpose();
          (*grads)["embed.e_py"].row(tp.py) += dcat.segment(a, a).transpose();
          (*grads)["embed.e_pz"].row(tp.pz) += dcat.segment(2 * a, a).transpose();
          (*grads)["embed.e_w"].row(tp.tw) += dcat.segment(3 * a, a).transpose();
          (*grads)["embed.e_t"].row(tp.tt) += dcat.segment(4 * a, a).transpose();
          break;
        }
        case TokenKind::EOS:
          break;
      }
    }
    encode_condition_backward(dx0.topRows(k), cond_tape, w, *grads);
  }

  out.total = out.ce_pos + out.ce_width + out.ce_thickness + out.bce_mos + out.bce_eos;
  if (!std::isfinite(out.total)) throw ValueError("loss: non-finite");
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"hidden", hidden},
          {"heads", heads},
          {"attr_embed_dim", attr_embed_dim},
          {"pos_vocab", pos_vocab},
          {"width_vocab", width_vocab},
          {"thickness_vocab", thickness_vocab},
          {"max_tokens", max_tokens},
          {"condition_tokens", condition_tokens},
          {"point_feature_dim", point_feature_dim},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers");
  c.hidden = j.at("hidden");
  c.heads = j.at("heads");
  c.attr_embed_dim = j.at("attr_embed_dim");
  c.pos_vocab = j.at("pos_vocab");
  c.width_vocab = j.at("width_vocab");
  c.thickness_vocab = j.at("thickness_vocab");
  c.max_tokens = j.at("max_tokens");
  c.condition_tokens = j.at("condition_tokens");
  c.point_feature_dim = j.at("point_feature_dim");
  c.seed = j.at("seed");
  return c;
}

Eigen::MatrixXd& ModelWeights::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValueError("unknown parameter: " + name);
  return it->second;
}

const Eigen::MatrixXd& ModelWeights::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValueError("unknown parameter: " + name);
  return it->second;
}

std::map<std::string, std::pair<int, int>> parameter_shapes(const ModelConfig& cfg) {
  if (cfg.hidden % cfg.heads != 0)
    throw ValueError("ModelConfig: hidden must be divisible by heads");
  const int h = cfg.hidden, a = cfg.attr_embed_dim, p = cfg.point_feature_dim;
  std::map<std::string, std::pair<int, int>> shapes;
  shapes["cond.mlp_w1"] = {p, 6};
  shapes["cond.mlp_b1"] = {p, 1};
  shapes["cond.mlp_w2"] = {p, p};
  shapes["cond.mlp_b2"] = {p, 1};
  shapes["cond.proj_w"] = {h, p};
  shapes["cond.proj_b"] = {h, 1};
  shapes["cond.group_embed"] = {cfg.condition_tokens, h};
  shapes["embed.e_px"] = {cfg.pos_vocab, a};
  shapes["embed.e_py"] = {cfg.pos_vocab, a};
  shapes["embed.e_pz"] = {cfg.pos_vocab, a};
  shapes["embed.e_w"] = {cfg.width_vocab, a};
  shapes["embed.e_t"] = {cfg.thickness_vocab, a};
  shapes["embed.proj_w"] = {h, 5 * a};
  shapes["embed.proj_b"] = {h, 1};
  shapes["embed.sos"] = {h, 1};
  shapes["embed.mos"] = {h, 1};
  shapes["embed.position"] = {cfg.max_tokens, h};
  for (int l = 0; l < cfg.layers; ++l) {
    shapes[layer_name(l, "ln1_g")] = {h, 1};
    shapes[layer_name(l, "ln1_b")] = {h, 1};
    shapes[layer_name(l, "attn_wq")] = {h, h};
    shapes[layer_name(l, "attn_bq")] = {h, 1};
    shapes[layer_name(l, "attn_wk")] = {h, h};
    shapes[layer_name(l, "attn_bk")] = {h, 1};
    shapes[layer_name(l, "attn_wv")] = {h, h};
    shapes[layer_name(l, "attn_bv")] = {h, 1};
    shapes[layer_name(l, "attn_wo")] = {h, h};
    shapes[layer_name(l, "attn_bo")] = {h, 1};
    shapes[layer_name(l, "ln2_g")] = {h, 1};
    shapes[layer_name(l, "ln2_b")] = {h, 1};
    shapes[layer_name(l, "mlp_w1")] = {4 * h, h};
    shapes[layer_name(l, "mlp_b1")] = {4 * h, 1};
    shapes[layer_name(l, "mlp_w2")] = {h, 4 * h};
    shapes[layer_name(l, "mlp_b2")] = {h, 1};
  }
  shapes["final.ln_g"] = {h, 1};
  shapes["final.ln_b"] = {h, 1};
  shapes["head_p.w1"] = {h, h};
  shapes["head_p.b1"] = {h, 1};
  shapes["head_p.w2"] = {3 * cfg.pos_vocab, h};
  shapes["head_p.b2"] = {3 * cfg.pos_vocab, 1};
  shapes["head_w.w1"] = {h, h + 3 * a};
  shapes["head_w.b1"] = {h, 1};
  shapes["head_w.w2"] = {cfg.width_vocab, h};
  shapes["head_w.b2"] = {cfg.width_vocab, 1};
  shapes["head_t.w1"] = {h, h + 4 * a};
  shapes["head_t.b1"] = {h, 1};
  shapes["head_t.w2"] = {cfg.thickness_vocab, h};
  shapes["head_t.b2"] = {cfg.thickness_vocab, 1};
  shapes["head_mos.w1"] = {h, h};
  shapes["head_mos.b1"] = {h, 1};
  shapes["head_mos.w2"] = {1, h};
  shapes["head_mos.b2"] = {1, 1};
  shapes["head_eos.w1"] = {h, h};
  shapes["head_eos.b1"] = {h, 1};
  shapes["head_eos.w2"] = {1, h};
  shapes["head_eos.b2"] = {1, 1};
  return shapes;
}

ModelWeights init_weights(const ModelConfig& cfg) {
  ModelWeights w;
  w.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Eigen::MatrixXd m(shape.first, shape.second);
    const bool is_gain = name.ends_with("_g");
    const bool is_bias = name.ends_with("_b") || name.ends_with("b1") || name.ends_with("b2") ||
                         name.find(".attn_b") != std::string::npos;
    if (is_gain) {
      m.setOnes();
    } else if (is_bias) {
      m.setZero();
    } else {
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = gauss(rng);
    }
    w.tensors.emplace(name, std::move(m));
  }
  return w;
}

Eigen::VectorXd embed_point(const TokenizedPoint& tp, const ModelWeights& weights) {
  check_point_range(tp, weights.config);
  return weights.at("embed.proj_w") * point_concat(tp, weights) +
         weights.at("embed.proj_b").col(0);
}

ConditionTokens encode_condition(const PointCloud& cloud, const ModelWeights& weights) {
  return {encode_condition_impl(cloud, weights, nullptr)};
}

Eigen::MatrixXd forward(const ConditionTokens& condition, const std::vector<HairToken>& prefix,
                        const ModelWeights& weights) {
  const Eigen::MatrixXd x0 = assemble_input(condition.tokens, prefix, weights, nullptr);
  const Eigen::MatrixXd f = transformer_forward(x0, weights, nullptr);
  return f.bottomRows(static_cast<Eigen::Index>(prefix.size()));
}

namespace {

Eigen::VectorXd ln_row(const Eigen::VectorXd& x, const Eigen::MatrixXd& g,
                       const Eigen::MatrixXd& b) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const double r = 1.0 / std::sqrt(var + kLnEps);
  return (((x.array() - mu) * r) * g.col(0).array() + b.col(0).array()).matrix();
}

Eigen::VectorXd decoder_push(DecoderState& st, Eigen::VectorXd x, const ModelWeights& w) {
  const auto& cfg = w.config;
  const int h = cfg.hidden;
  const int nh = cfg.heads;
  const int dh = h / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int pos = st.length;

  for (int l = 0; l < cfg.layers; ++l) {
    const Eigen::VectorXd n1 =
        ln_row(x, w.at(layer_name(l, "ln1_g")), w.at(layer_name(l, "ln1_b")));
    const Eigen::VectorXd q = w.at(layer_name(l, "attn_wq")) * n1 + w.at(layer_name(l, "attn_bq")).col(0);
    st.k_cache[l].row(pos) =
        (w.at(layer_name(l, "attn_wk")) * n1 + w.at(layer_name(l, "attn_bk")).col(0)).transpose();
    st.v_cache[l].row(pos) =
        (w.at(layer_name(l, "attn_wv")) * n1 + w.at(layer_name(l, "attn_bv")).col(0)).transpose();

    Eigen::VectorXd attn(h);
    for (int hd = 0; hd < nh; ++hd) {
      const auto kh = st.k_cache[l].middleCols(hd * dh, dh).topRows(pos + 1);
      const auto vh = st.v_cache[l].middleCols(hd * dh, dh).topRows(pos + 1);
      Eigen::VectorXd scores = kh * q.segment(hd * dh, dh) * scale;
      const double mx = scores.maxCoeff();
      Eigen::VectorXd p = (scores.array() - mx).exp();
      p /= p.sum();
      attn.segment(hd * dh, dh) = vh.transpose() * p;
    }
    const Eigen::VectorXd y =
        w.at(layer_name(l, "attn_wo")) * attn + w.at(layer_name(l, "attn_bo")).col(0);
    const Eigen::VectorXd x2 = x + y;
    const Eigen::VectorXd n2 =
        ln_row(x2, w.at(layer_name(l, "ln2_g")), w.at(layer_name(l, "ln2_b")));
    Eigen::VectorXd h1 = w.at(layer_name(l, "mlp_w1")) * n2 + w.at(layer_name(l, "mlp_b1")).col(0);
    h1 = h1.unaryExpr([](double v) { return gelu(v); });
    x = x2 + w.at(layer_name(l, "mlp_w2")) * h1 + w.at(layer_name(l, "mlp_b2")).col(0);
  }
  ++st.length;
  return ln_row(x, w.at("final.ln_g"), w.at("final.ln_b"));
}

}  // namespace

DecoderState init_decoder(const ConditionTokens& condition, const ModelWeights& weights) {
  const auto& cfg = weights.config;
  if (condition.tokens.rows() != cfg.condition_tokens || condition.tokens.cols() != cfg.hidden)
    throw ValueError("init_decoder: condition token shape mismatch");
  DecoderState st;
  st.k_cache.assign(cfg.layers, Eigen::MatrixXd::Zero(cfg.max_tokens, cfg.hidden));
  st.v_cache.assign(cfg.layers, Eigen::MatrixXd::Zero(cfg.max_tokens, cfg.hidden));
  for (Eigen::Index i = 0; i < condition.tokens.rows(); ++i) {
    const Eigen::VectorXd x = condition.tokens.row(i).transpose() +
                              weights.at("embed.position").row(st.length).transpose();
    decoder_push(st, x, weights);
  }
  return st;
}

Eigen::VectorXd decoder_append(DecoderState& state, const HairToken& token,
                               const ModelWeights& weights) {
  const auto& cfg = weights.config;
  if (state.length >= cfg.max_tokens)
    throw BudgetError("decoder_append: token budget exhausted");
  Eigen::VectorXd x;
  switch (token.kind) {
    case TokenKind::SOS:
      x = weights.at("embed.sos").col(0);
      break;
    case TokenKind::MOS:
      x = weights.at("embed.mos").col(0);
      break;
    case TokenKind::Point:
      x = embed_point(token.point, weights);
      break;
    case TokenKind::EOS:
      throw ValueError("decoder_append: EOS cannot be fed back");
  }
  x += weights.at("embed.position").row(state.length).transpose();
  return decoder_push(state, x, weights);
}

CascadeLogits decode_cascaded(const Eigen::VectorXd& f, const ModelWeights& weights,
                              const std::optional<TokenizedPoint>& teacher) {
  const auto& cfg = weights.config;
  const int a = cfg.attr_embed_dim;
  CascadeLogits out;
  const Eigen::VectorXd plogits = mlp_head_forward(f, weights, "head_p", nullptr);
  out.pos.resize(3, cfg.pos_vocab);
  for (int ax = 0; ax < 3; ++ax)
    out.pos.row(ax) = plogits.segment(ax * cfg.pos_vocab, cfg.pos_vocab).transpose();

  int px, py, pz;
  if (teacher) {
    px = teacher->px;
    py = teacher->py;
    pz = teacher->pz;
  } else {
    out.pos.row(0).maxCoeff(&px);
    out.pos.row(1).maxCoeff(&py);
    out.pos.row(2).maxCoeff(&pz);
  }
  Eigen::VectorXd pos_cat(3 * a);
  pos_cat.segment(0, a) = weights.at("embed.e_px").row(px).transpose();
  pos_cat.segment(a, a) = weights.at("embed.e_py").row(py).transpose();
  pos_cat.segment(2 * a, a) = weights.at("embed.e_pz").row(pz).transpose();

  Eigen::VectorXd win(f.size() + 3 * a);
  win << f, pos_cat;
  out.width = mlp_head_forward(win, weights, "head_w", nullptr);

  int tw;
  if (teacher)
    tw = teacher->tw;
  else
    out.width.maxCoeff(&tw);
  Eigen::VectorXd tin(f.size() + 4 * a);
  tin << f, pos_cat, weights.at("embed.e_w").row(tw).transpose();
  out.thickness = mlp_head_forward(tin, weights, "head_t", nullptr);

  out.mos = mlp_head_forward(f, weights, "head_mos", nullptr)(0);
  out.eos = mlp_head_forward(f, weights, "head_eos", nullptr)(0);
  return out;
}

std::vector<TrainingItem> build_training_items(const std::vector<Hairstyle>& styles,
                                               const PiecewiseScheme& scheme, OrderingMode mode,
                                               std::size_t cloud_points, std::uint64_t seed) {
  std::vector<TrainingItem> items;
  items.reserve(styles.size());
  for (std::size_t i = 0; i < styles.size(); ++i) {
    TrainingItem item;
    item.cloud = sample_surface(style_to_mesh(styles[i]), cloud_points, seed + i);
    item.seq = to_sequence(styles[i], scheme, mode);
    items.push_back(std::move(item));
  }
  return items;
}

LossBreakdown loss(const std::vector<TrainingItem>& batch, const ModelWeights& weights) {
  LossBreakdown out;
  run_batch(batch, weights, nullptr, out);
  return out;
}

ParamMap gradients(const std::vector<TrainingItem>& batch, const ModelWeights& weights,
                   LossBreakdown* out) {
  ParamMap grads;
  for (const auto& [name, tensor] : weights.tensors)
    grads.emplace(name, Eigen::MatrixXd::Zero(tensor.rows(), tensor.cols()));
  LossBreakdown local;
  run_batch(batch, weights, &grads, local);
  if (out) *out = local;
  return grads;
}

Accuracy evaluate_accuracy(const std::vector<TrainingItem>& items, const ModelWeights& weights) {
  Accuracy acc;
  std::size_t axis_hits = 0, w_hits = 0, t_hits = 0;
  for (const auto& item : items) {
    const auto& toks = item.seq.tokens;
    const std::vector<HairToken> prefix(toks.begin(), toks.end() - 1);
    const auto cond = encode_condition(item.cloud, weights);
    const Eigen::MatrixXd f = forward(cond, prefix, weights);
    for (std::size_t j = 0; j + 1 < toks.size(); ++j) {
      if (toks[j + 1].kind != TokenKind::Point) continue;
      const TokenizedPoint& tp = toks[j + 1].point;
      const auto logits =
          decode_cascaded(f.row(static_cast<Eigen::Index>(j)).transpose(), weights, tp);
      int arg;
      logits.pos.row(0).maxCoeff(&arg);
      axis_hits += arg == tp.px;
      logits.pos.row(1).maxCoeff(&arg);
      axis_hits += arg == tp.py;
      logits.pos.row(2).maxCoeff(&arg);
      axis_hits += arg == tp.pz;
      logits.width.maxCoeff(&arg);
      w_hits += arg == tp.tw;
      logits.thickness.maxCoeff(&arg);
      t_hits += arg == tp.tt;
      ++acc.point_targets;
    }
  }
  if (acc.point_targets > 0) {
    acc.position = static_cast<double>(axis_hits) / (3.0 * acc.point_targets);
    acc.width = static_cast<double>(w_hits) / acc.point_targets;
    acc.thickness = static_cast<double>(t_hits) / acc.point_targets;
  }
  return acc;
}

TrainResult train(const std::vector<TrainingItem>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const ModelWeights* init,
                  const OptimizerState* opt) {
  if (dataset.empty()) throw ValueError("train: empty dataset");
  TrainResult result;
  result.weights = init ? *init : init_weights(mcfg);
  ModelWeights& w = result.weights;

  ParamMap& m1 = result.opt.m;
  ParamMap& m2 = result.opt.v;
  if (opt && !opt->m.empty()) {
    result.opt = *opt;
  } else {
    for (const auto& [name, tensor] : w.tensors) {
      m1.emplace(name, Eigen::MatrixXd::Zero(tensor.rows(), tensor.cols()));
      m2.emplace(name, Eigen::MatrixXd::Zero(tensor.rows(), tensor.cols()));
    }
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::mt19937_64 rng(tcfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0u);

  long& step = result.opt.step;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      ParamMap accum;
      double accum_loss = 0.0;
      int groups = 0;
      for (int g = 0; g < tcfg.accum_steps && cursor < order.size(); ++g) {
        std::vector<TrainingItem> batch;
        for (int b = 0; b < tcfg.batch_size && cursor < order.size(); ++b)
          batch.push_back(dataset[order[cursor++]]);
        LossBreakdown lb;
        ParamMap grads = gradients(batch, w, &lb);
        accum_loss += lb.total;
        if (accum.empty()) {
          accum = std::move(grads);
        } else {
          for (auto& [name, tensor] : accum) tensor += grads.at(name);
        }
        ++groups;
      }
      for (auto& [name, tensor] : accum) tensor /= groups;
      accum_loss /= groups;
      if (!std::isfinite(accum_loss))
        throw ValueError("train: diverged at step " + std::to_string(step));

      if (tcfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, tensor] : accum) sq += tensor.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > tcfg.clip_norm)
          for (auto& [name, tensor] : accum) tensor *= tcfg.clip_norm / norm;
      }

      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (auto& [name, tensor] : w.tensors) {
        auto& g = accum.at(name);
        auto& mm = m1.at(name);
        auto& vv = m2.at(name);
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        tensor -= (tcfg.lr * (mm / bc1).array() / ((vv / bc2).array().sqrt() + eps)).matrix();
      }
      result.loss_curve.push_back(accum_loss);
    }
    if (tcfg.verbose && !result.loss_curve.empty())
      std::fprintf(stderr, "epoch %d loss %.5f\n", epoch, result.loss_curve.back());
  }
  return result;
}

namespace {

std::string tensor_file_name(const std::string& name) {
  std::string file = name;
  std::replace(file.begin(), file.end(), '.', '_');
  return file + ".bin";
}

}  // namespace

void save_weights(const ModelWeights& weights, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["config"] = weights.config.to_json();
  auto tensors = nlohmann::json::array();
  for (const auto& [name, tensor] : weights.tensors) {
    const std::string file = tensor_file_name(name);
    tensors.push_back({{"name", name},
                       {"rows", tensor.rows()},
                       {"cols", tensor.cols()},
                       {"dtype", "f32"},
                       {"file", file}});
    std::ofstream out(fs::path(dir) / file, std::ios::binary);
    for (Eigen::Index i = 0; i < tensor.rows(); ++i)
      for (Eigen::Index j = 0; j < tensor.cols(); ++j) {
        const float v = static_cast<float>(tensor(i, j));
        out.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
    if (!out) throw ValueError("save_weights: write failed for " + file);
  }
  manifest["tensors"] = tensors;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
  if (!mf) throw ValueError("save_weights: manifest write failed");
}

ModelWeights load_weights(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw ParseError("load_weights: missing manifest.json");
  nlohmann::json manifest;
  mf >> manifest;
  ModelWeights w;
  w.config = ModelConfig::from_json(manifest.at("config"));
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name");
    const Eigen::Index rows = entry.at("rows"), cols = entry.at("cols");
    std::ifstream in(fs::path(dir) / entry.at("file").get<std::string>(), std::ios::binary);
    if (!in) throw ParseError("load_weights: missing tensor file for " + name);
    Eigen::MatrixXd tensor(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        float v;
        in.read(reinterpret_cast<char*>(&v), sizeof(float));
        tensor(i, j) = v;
      }
    if (!in) throw ParseError("load_weights: truncated tensor file for " + name);
    w.tensors.emplace(name, std::move(tensor));
  }
  const auto shapes = parameter_shapes(w.config);
  for (const auto& [name, shape] : shapes) {
    const auto it = w.tensors.find(name);
    if (it == w.tensors.end() || it->second.rows() != shape.first ||
        it->second.cols() != shape.second)
      throw ParseError("load_weights: tensor missing or misshaped: " + name);
  }
  return w;
}

void save_loss_curve(const std::vector<double>& curve, const std::string& path) {
  std::ostringstream os;
  os << "step,loss\n";
  os.precision(12);
  for (std::size_t i = 0; i < curve.size(); ++i) os << i << "," << curve[i] << "\n";
  std::ofstream out(path);
  out << os.str();
  if (!out) throw ValueError("save_loss_curve: write failed");
}

}  // namespace charm
