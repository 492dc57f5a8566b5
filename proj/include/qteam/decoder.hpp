#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qteam/geometry.hpp"
#include "qteam/losses.hpp"
#include "qteam/mask.hpp"
#include "qteam/matching.hpp"
#include "qteam/partition.hpp"
#include "qteam/rng.hpp"

namespace qteam {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Scene tokens, one feature vector per row.
using SceneFeatures = MatrixXd;

struct ModelConfig {
  int embed_dim = 64;    // D, must be divisible by 8
  int layers = 2;        // decoder depth
  int classes = 8;
  int feature_dim = 64;  // width of scene feature tokens
  int ffn_dim = 128;
  double pe_base = 10000.0;

  void validate() const {
    if (embed_dim <= 0 || embed_dim % 8 != 0) {
      throw std::invalid_argument("ModelConfig: embed_dim must be a positive multiple of 8");
    }
    if (layers < 1 || classes < 1 || feature_dim < 1 || ffn_dim < 1) {
      throw std::invalid_argument("ModelConfig: dimensions must be positive");
    }
  }
};

struct Linear {
  MatrixXd W;  // in x out
  MatrixXd b;  // 1 x out
};

struct LayerNormParams {
  MatrixXd gain;  // 1 x d
  MatrixXd bias;  // 1 x d
};

struct LayerParams {
  Linear sa_q, sa_k, sa_v, sa_o;
  LayerNormParams ln1;
  Linear ca_q, ca_k, ca_v, ca_o;
  LayerNormParams ln2;
  Linear ffn1, ffn2;
  LayerNormParams ln3;
  Linear box1, box2, box_out;  // per-layer offset head
};

/// All decoder parameters. Tensor layout is fixed by tensor_refs(), which
/// also defines the checkpoint order.
struct ModelParams {
  ModelConfig cfg;
  Linear emb1, emb2;  // anchor-embedding MLP
  std::vector<LayerParams> layers;
  Linear cls_head;  // shared across layers
};

struct TensorRef {
  std::string name;
  MatrixXd* mat;
};

namespace detail {

inline void push_linear(std::vector<TensorRef>& out, const std::string& prefix, Linear& lin) {
  out.push_back({prefix + ".W", &lin.W});
  out.push_back({prefix + ".b", &lin.b});
}

inline void push_ln(std::vector<TensorRef>& out, const std::string& prefix, LayerNormParams& ln) {
  out.push_back({prefix + ".gain", &ln.gain});
  out.push_back({prefix + ".bias", &ln.bias});
}

}  // namespace detail

inline std::vector<TensorRef> tensor_refs(ModelParams& p) {
  std::vector<TensorRef> out;
  detail::push_linear(out, "emb1", p.emb1);
  detail::push_linear(out, "emb2", p.emb2);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l);
    auto& lp = p.layers[l];
    detail::push_linear(out, pre + ".sa_q", lp.sa_q);
    detail::push_linear(out, pre + ".sa_k", lp.sa_k);
    detail::push_linear(out, pre + ".sa_v", lp.sa_v);
    detail::push_linear(out, pre + ".sa_o", lp.sa_o);
    detail::push_ln(out, pre + ".ln1", lp.ln1);
    detail::push_linear(out, pre + ".ca_q", lp.ca_q);
    detail::push_linear(out, pre + ".ca_k", lp.ca_k);
    detail::push_linear(out, pre + ".ca_v", lp.ca_v);
    detail::push_linear(out, pre + ".ca_o", lp.ca_o);
    detail::push_ln(out, pre + ".ln2", lp.ln2);
    detail::push_linear(out, pre + ".ffn1", lp.ffn1);
    detail::push_linear(out, pre + ".ffn2", lp.ffn2);
    detail::push_ln(out, pre + ".ln3", lp.ln3);
    detail::push_linear(out, pre + ".box1", lp.box1);
    detail::push_linear(out, pre + ".box2", lp.box2);
    detail::push_linear(out, pre + ".box_out", lp.box_out);
  }
  detail::push_linear(out, "cls_head", p.cls_head);
  return out;
}

namespace detail {

inline Linear make_linear(int din, int dout) {
  Linear l;
  l.W = MatrixXd::Zero(din, dout);
  l.b = MatrixXd::Zero(1, dout);
  return l;
}

inline LayerNormParams make_ln(int d) {
  LayerNormParams ln;
  ln.gain = MatrixXd::Ones(1, d);
  ln.bias = MatrixXd::Zero(1, d);
  return ln;
}

inline void randomize_linear(Linear& l, Rng& rng, double scale = 1.0) {
  const double std = scale / std::sqrt(static_cast<double>(l.W.rows()));
  for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
    for (Eigen::Index j = 0; j < l.W.cols(); ++j) l.W(i, j) = std * rng.normal();
  }
  l.b.setZero();
}

}  // namespace detail

inline ModelParams make_params(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.embed_dim;
  ModelParams p;
  p.cfg = cfg;
  p.emb1 = detail::make_linear(d, d);
  p.emb2 = detail::make_linear(d, d);
  p.layers.resize(cfg.layers);
  for (auto& lp : p.layers) {
    lp.sa_q = detail::make_linear(d, d);
    lp.sa_k = detail::make_linear(d, d);
    lp.sa_v = detail::make_linear(d, d);
    lp.sa_o = detail::make_linear(d, d);
    lp.ln1 = detail::make_ln(d);
    lp.ca_q = detail::make_linear(d, d);
    lp.ca_k = detail::make_linear(cfg.feature_dim, d);
    lp.ca_v = detail::make_linear(cfg.feature_dim, d);
    lp.ca_o = detail::make_linear(d, d);
    lp.ln2 = detail::make_ln(d);
    lp.ffn1 = detail::make_linear(d, cfg.ffn_dim);
    lp.ffn2 = detail::make_linear(cfg.ffn_dim, d);
    lp.ln3 = detail::make_ln(d);
    lp.box1 = detail::make_linear(d, d);
    lp.box2 = detail::make_linear(d, d);
    lp.box_out = detail::make_linear(d, 4);
  }
  p.cls_head = detail::make_linear(d, cfg.classes);
  return p;
}

/// Seeded parameter init. The offset head's final projection starts near
/// zero so layer boxes begin at their anchors; the class head bias starts
/// negative so early predictions lean background.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = make_params(cfg);
  Rng rng(seed);
  detail::randomize_linear(p.emb1, rng);
  detail::randomize_linear(p.emb2, rng);
  for (auto& lp : p.layers) {
    detail::randomize_linear(lp.sa_q, rng);
    detail::randomize_linear(lp.sa_k, rng);
    detail::randomize_linear(lp.sa_v, rng);
    detail::randomize_linear(lp.sa_o, rng);
    detail::randomize_linear(lp.ca_q, rng);
    detail::randomize_linear(lp.ca_k, rng);
    detail::randomize_linear(lp.ca_v, rng);
    detail::randomize_linear(lp.ca_o, rng);
    detail::randomize_linear(lp.ffn1, rng);
    detail::randomize_linear(lp.ffn2, rng);
    detail::randomize_linear(lp.box1, rng);
    detail::randomize_linear(lp.box2, rng);
    detail::randomize_linear(lp.box_out, rng, 1e-3);
  }
  detail::randomize_linear(p.cls_head, rng);
  p.cls_head.b.setConstant(-2.0);
  return p;
}

inline ModelParams zeros_like(const ModelParams& src) {
  ModelParams z = make_params(src.cfg);
  for (auto& ref : tensor_refs(z)) {
    ref.mat->setZero();
  }
  return z;
}

/// Sinusoidal encoding of a box: each of the four coordinates contributes
/// d/4 components of interleaved sine/cosine at geometrically spaced
/// frequencies (phase = coord * 2*pi * base^(-p / npairs)).
inline VectorXd positional_encode(const Box& a, int d, double base = 10000.0) {
  if (d <= 0 || d % 8 != 0) {
    throw std::invalid_argument("positional_encode: width " + std::to_string(d) +
                                " is not a positive multiple of 8");
  }
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const int per_coord = d / 4;
  const int npairs = per_coord / 2;
  const double coords[4] = {a.cx, a.cy, a.w, a.h};
  VectorXd out(d);
  for (int c = 0; c < 4; ++c) {
    for (int p = 0; p < npairs; ++p) {
      const double freq = std::pow(base, -static_cast<double>(p) / npairs);
      const double ang = coords[c] * kTwoPi * freq;
      out[c * per_coord + 2 * p] = std::sin(ang);
      out[c * per_coord + 2 * p + 1] = std::cos(ang);
    }
  }
  return out;
}

namespace detail {

inline MatrixXd anchor_pe(const std::vector<Box>& anchors, int d, double base) {
  MatrixXd pe(anchors.size(), d);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    pe.row(i) = positional_encode(anchors[i], d, base).transpose();
  }
  return pe;
}

inline MatrixXd apply_linear(const MatrixXd& x, const Linear& lin) {
  MatrixXd y = x * lin.W;
  y.rowwise() += lin.b.row(0);
  return y;
}

// y = x W + b backward; accumulates parameter grads and the input grad.
inline void linear_backward(const MatrixXd& x, const Linear& lin, const MatrixXd& dy,
                            MatrixXd& dx_accum, Linear& g) {
  g.W.noalias() += x.transpose() * dy;
  g.b.row(0) += dy.colwise().sum();
  dx_accum.noalias() += dy * lin.W.transpose();
}

constexpr double kLnEps = 1e-5;

struct LnTrace {
  MatrixXd xhat;
  VectorXd rstd;
};

inline MatrixXd layernorm_forward(const MatrixXd& x, const LayerNormParams& ln, LnTrace& t) {
  const Eigen::Index n = x.rows(), d = x.cols();
  t.xhat.resize(n, d);
  t.rstd.resize(n);
  MatrixXd y(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    t.rstd[r] = rstd;
    t.xhat.row(r) = ((x.row(r).array() - mu) * rstd).matrix();
    y.row(r) = t.xhat.row(r).cwiseProduct(ln.gain.row(0)) + ln.bias.row(0);
  }
  return y;
}

inline MatrixXd layernorm_backward(const LnTrace& t, const LayerNormParams& ln, const MatrixXd& dy,
                                   LayerNormParams& g) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  g.gain.row(0) += (dy.array() * t.xhat.array()).colwise().sum().matrix();
  g.bias.row(0) += dy.colwise().sum();
  MatrixXd dx(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::ArrayXd dxhat = dy.row(r).cwiseProduct(ln.gain.row(0)).transpose().array();
    const Eigen::ArrayXd xhat = t.xhat.row(r).transpose().array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat).mean();
    dx.row(r) = (t.rstd[r] * (dxhat - m1 - xhat * m2)).matrix().transpose();
  }
  return dx;
}

inline void softmax_rows_inplace(MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

// dS = P o (dP - rowsum(dP o P)) per row.
inline MatrixXd softmax_rows_backward(const MatrixXd& p, const MatrixXd& dp) {
  MatrixXd ds(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double dot = p.row(r).dot(dp.row(r));
    ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
  }
  return ds;
}

inline double inverse_sigmoid(double x) {
  constexpr double eps = 1e-6;
  const double v = std::clamp(x, eps, 1.0 - eps);
  return std::log(v / (1.0 - v));
}

struct LayerTrace {
  MatrixXd x_in;
  MatrixXd q, k, v, attn, sa_ctx, x_sa;
  LnTrace ln1t;
  MatrixXd x1;
  MatrixXd qc, kc, vc, attn_c, ca_ctx, x_ca;
  LnTrace ln2t;
  MatrixXd x2;
  MatrixXd ffn_act, x_ffn;
  LnTrace ln3t;
  MatrixXd x3;
  MatrixXd bh1_act, bh2_act, delta;
  MatrixXd logit_box, boxes;        // N x 4, boxes = sigmoid(logit_box)
  MatrixXd anchors_in;              // N x 4 center-format values entering the layer
  MatrixXd cls_logits, cls_probs;   // N x C
};

struct DecodeTrace {
  MatrixXd pe, emb_act, x0;
  std::vector<LayerTrace> layers;
};

inline void forward_trace(const SceneFeatures& features, const QueryTeam& team,
                          const ModelParams& params, const AttentionMask& mask,
                          DecodeTrace& t) {
  const ModelConfig& cfg = params.cfg;
  const int n = team.size();
  if (mask.n != n) throw std::invalid_argument("decode: mask size does not match team");
  if (features.cols() != cfg.feature_dim) {
    throw std::invalid_argument("decode: feature width " + std::to_string(features.cols()) +
                                " != configured " + std::to_string(cfg.feature_dim));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));

  t.pe = anchor_pe(team.anchors, cfg.embed_dim, cfg.pe_base);
  t.emb_act = apply_linear(t.pe, params.emb1).array().tanh().matrix();
  t.x0 = apply_linear(t.emb_act, params.emb2);

  MatrixXd x = t.x0;
  MatrixXd logit_prev(n, 4);
  MatrixXd anchors_prev(n, 4);
  for (int i = 0; i < n; ++i) {
    const Box& a = team.anchors[i];
    anchors_prev.row(i) << a.cx, a.cy, a.w, a.h;
    logit_prev.row(i) << inverse_sigmoid(a.cx), inverse_sigmoid(a.cy), inverse_sigmoid(a.w),
        inverse_sigmoid(a.h);
  }

  t.layers.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerTrace& lt = t.layers[l];
    const LayerParams& lp = params.layers[l];
    lt.x_in = x;
    lt.anchors_in = anchors_prev;

    // Masked self-attention: scores only exist inside same-group blocks, so
    // each block row renormalizes over its own group.
    lt.q = apply_linear(x, lp.sa_q);
    lt.k = apply_linear(x, lp.sa_k);
    lt.v = apply_linear(x, lp.sa_v);
    lt.attn = MatrixXd::Zero(n, n);
    lt.sa_ctx = MatrixXd::Zero(n, cfg.embed_dim);
    for (const auto& [b, e] : mask.blocks) {
      const int sz = e - b;
      MatrixXd s = lt.q.middleRows(b, sz) * lt.k.middleRows(b, sz).transpose() * scale;
      softmax_rows_inplace(s);
      lt.attn.block(b, b, sz, sz) = s;
      lt.sa_ctx.middleRows(b, sz) = s * lt.v.middleRows(b, sz);
    }
    lt.x_sa = x + apply_linear(lt.sa_ctx, lp.sa_o);
    lt.x1 = layernorm_forward(lt.x_sa, lp.ln1, lt.ln1t);

    // Cross-attention over scene tokens (unmasked).
    lt.qc = apply_linear(lt.x1, lp.ca_q);
    lt.kc = apply_linear(features, lp.ca_k);
    lt.vc = apply_linear(features, lp.ca_v);
    lt.attn_c = lt.qc * lt.kc.transpose() * scale;
    softmax_rows_inplace(lt.attn_c);
    lt.ca_ctx = lt.attn_c * lt.vc;
    lt.x_ca = lt.x1 + apply_linear(lt.ca_ctx, lp.ca_o);
    lt.x2 = layernorm_forward(lt.x_ca, lp.ln2, lt.ln2t);

    lt.ffn_act = apply_linear(lt.x2, lp.ffn1).array().tanh().matrix();
    lt.x_ffn = lt.x2 + apply_linear(lt.ffn_act, lp.ffn2);
    lt.x3 = layernorm_forward(lt.x_ffn, lp.ln3, lt.ln3t);
    if (!lt.x3.allFinite()) {
      throw std::runtime_error("decode: non-finite activations at layer " + std::to_string(l));
    }

    // Offset head refines the running anchor in logit space.
    lt.bh1_act = apply_linear(lt.x3, lp.box1).array().tanh().matrix();
    lt.bh2_act = apply_linear(lt.bh1_act, lp.box2).array().tanh().matrix();
    lt.delta = apply_linear(lt.bh2_act, lp.box_out);
    lt.logit_box = logit_prev + lt.delta;
    lt.boxes = lt.logit_box.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });

    lt.cls_logits = apply_linear(lt.x3, params.cls_head);
    lt.cls_probs = lt.cls_logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });

    logit_prev = lt.logit_box;
    anchors_prev = lt.boxes;
    x = lt.x3;
  }
}

inline std::vector<Prediction> layer_predictions(const LayerTrace& lt) {
  std::vector<Prediction> preds;
  const int n = static_cast<int>(lt.boxes.rows());
  preds.reserve(n);
  for (int i = 0; i < n; ++i) {
    Prediction p{Box(lt.boxes(i, 0), lt.boxes(i, 1), lt.boxes(i, 2), lt.boxes(i, 3)), {}, i};
    p.class_probs.resize(lt.cls_probs.cols());
    for (Eigen::Index c = 0; c < lt.cls_probs.cols(); ++c) p.class_probs[c] = lt.cls_probs(i, c);
    preds.push_back(std::move(p));
  }
  return preds;
}

inline std::vector<Box> layer_anchors(const LayerTrace& lt) {
  std::vector<Box> anchors;
  const int n = static_cast<int>(lt.anchors_in.rows());
  anchors.reserve(n);
  for (int i = 0; i < n; ++i) {
    anchors.emplace_back(lt.anchors_in(i, 0), lt.anchors_in(i, 1), lt.anchors_in(i, 2),
                         lt.anchors_in(i, 3));
  }
  return anchors;
}

}  // namespace detail

/// Query embeddings q_i = MLP(PE(anchor_i)); row i depends only on anchor i.
inline MatrixXd embed_queries(const QueryTeam& team, const ModelParams& params) {
  const MatrixXd pe = detail::anchor_pe(team.anchors, params.cfg.embed_dim, params.cfg.pe_base);
  const MatrixXd act = detail::apply_linear(pe, params.emb1).array().tanh().matrix();
  return detail::apply_linear(act, params.emb2);
}

struct LayerOutput {
  std::vector<Prediction> preds;
  std::vector<Box> input_anchors;
};

struct DecodeOutput {
  std::vector<LayerOutput> layers;
  const std::vector<Prediction>& final_preds() const { return layers.back().preds; }
};

/// Full forward pass: per-layer predictions with layer-wise anchor
/// refinement. Initial anchors are left untouched.
inline DecodeOutput decode(const SceneFeatures& features, const QueryTeam& team,
                           const ModelParams& params, const AttentionMask& mask) {
  detail::DecodeTrace t;
  detail::forward_trace(features, team, params, mask, t);
  DecodeOutput out;
  out.layers.reserve(t.layers.size());
  for (const auto& lt : t.layers) {
    out.layers.push_back({detail::layer_predictions(lt), detail::layer_anchors(lt)});
  }
  return out;
}

struct SceneLossOptions {
  LossWeights lambda;
  CostWeights match_weights;
  FocalParams focal;
  double eta = 0.25;
  /// Optional per-object group override (absolute-scale bucketing); when
  /// null, objects bucket by relative scale through the partition.
  const std::vector<int>* object_groups = nullptr;
};

/// Matching decisions and position-loss branch taken at a base point; reused
/// to evaluate the same smooth piece at perturbed parameters.
struct FrozenAssignment {
  std::vector<MatchResult> matches;          // per layer
  std::vector<std::vector<int>> violators;   // per layer
};

struct SceneLoss {
  LossBreakdown breakdown;
  FrozenAssignment assignment;
};

namespace detail {

inline MatchResult match_layer(const std::vector<Prediction>& preds, const QueryTeam& team,
                               const std::vector<GtObject>& gts, const ScalePartition& partition,
                               const SceneLossOptions& opts) {
  if (opts.object_groups != nullptr) {
    return team_match_grouped(team, preds, gts, *opts.object_groups, opts.match_weights);
  }
  return team_match(team, preds, gts, partition, opts.match_weights);
}

// Position loss over an explicit violator set (size and membership constant).
inline double frozen_position_value(const std::vector<Box>& anchors,
                                    const std::vector<Prediction>& preds,
                                    const std::vector<int>& violators) {
  if (violators.empty()) return 0.0;
  double sum = 0.0;
  for (int i : violators) sum += center_distance(preds[i].box, anchors[i]);
  return sum / static_cast<double>(violators.size());
}

}  // namespace detail

/// Loss of one scene under per-layer group-wise matching, with gradients for
/// every parameter tensor accumulated into *grads (pass nullptr to skip the
/// backward pass). Matching indices and the position-loss violator sets are
/// treated as constants of the backward pass.
inline SceneLoss scene_loss_and_gradients(const SceneFeatures& features,
                                          const std::vector<GtObject>& gts, const QueryTeam& team,
                                          const ModelParams& params, const AttentionMask& mask,
                                          const ScalePartition& partition,
                                          const SceneLossOptions& opts, ModelParams* grads) {
  const ModelConfig& cfg = params.cfg;
  const int n = team.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));

  detail::DecodeTrace t;
  detail::forward_trace(features, team, params, mask, t);

  SceneLoss out;
  const int L = cfg.layers;
  std::vector<std::vector<Prediction>> preds(L);
  std::vector<std::vector<Box>> anchors(L);
  std::vector<ClassificationLossResult> cls_res(L);
  std::vector<BoxLossResult> box_res(L);
  std::vector<PositionLossResult> pos_res(L);

  double cls_sum = 0.0, l1_sum = 0.0, giou_sum = 0.0, pos_sum = 0.0;
  for (int l = 0; l < L; ++l) {
    preds[l] = detail::layer_predictions(t.layers[l]);
    anchors[l] = detail::layer_anchors(t.layers[l]);
    MatchResult match = detail::match_layer(preds[l], team, gts, partition, opts);
    cls_res[l] = classification_loss(preds[l], match, gts, opts.focal);
    box_res[l] = box_losses(preds[l], match, gts);
    pos_res[l] = position_loss(anchors[l], preds[l], opts.eta);
    cls_sum += cls_res[l].value;
    l1_sum += box_res[l].l1;
    giou_sum += box_res[l].giou;
    pos_sum += pos_res[l].value;
    out.assignment.matches.push_back(std::move(match));
    out.assignment.violators.push_back(pos_res[l].violators);
  }
  out.breakdown = total_loss(cls_sum, l1_sum, giou_sum, pos_sum, opts.lambda);
  if (!std::isfinite(out.breakdown.total)) {
    throw std::runtime_error("scene_loss: non-finite loss");
  }
  if (grads == nullptr) return out;

  const LossWeights& lam = opts.lambda;
  MatrixXd dx_next = MatrixXd::Zero(n, cfg.embed_dim);
  MatrixXd dlogit_next = MatrixXd::Zero(n, 4);
  MatrixXd danchor_above = MatrixXd::Zero(n, 4);  // grads into boxes_l from layer l+1's
                                                  // position anchors
  for (int l = L - 1; l >= 0; --l) {
    const detail::LayerTrace& lt = t.layers[l];
    const LayerParams& lp = params.layers[l];
    LayerParams& gp = grads->layers[l];

    // d(total) / d(boxes_l).
    MatrixXd db = danchor_above;
    for (int i = 0; i < n; ++i) {
      db(i, 0) += lam.l1 * box_res[l].dl1[i].cx + lam.giou * box_res[l].dgiou[i].cx +
                  lam.pos * pos_res[l].dcenters[i][0];
      db(i, 1) += lam.l1 * box_res[l].dl1[i].cy + lam.giou * box_res[l].dgiou[i].cy +
                  lam.pos * pos_res[l].dcenters[i][1];
      db(i, 2) += lam.l1 * box_res[l].dl1[i].w + lam.giou * box_res[l].dgiou[i].w;
      db(i, 3) += lam.l1 * box_res[l].dl1[i].h + lam.giou * box_res[l].dgiou[i].h;
    }
    // Layer l's position loss pulls on its input anchors, which are the
    // previous layer's boxes (constants at l = 0).
    danchor_above.setZero();
    if (l >= 1) {
      for (int i = 0; i < n; ++i) {
        danchor_above(i, 0) = -lam.pos * pos_res[l].dcenters[i][0];
        danchor_above(i, 1) = -lam.pos * pos_res[l].dcenters[i][1];
      }
    }

    const MatrixXd sig_prime = (lt.boxes.array() * (1.0 - lt.boxes.array())).matrix();
    const MatrixXd dlogit = db.cwiseProduct(sig_prime) + dlogit_next;
    dlogit_next = dlogit;  // identity through logit_{l} = logit_{l-1} + delta_l

    MatrixXd dx3 = dx_next;

    // Class head (shared tensor, accumulated across layers).
    MatrixXd dcls(n, cfg.classes);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < cfg.classes; ++c) dcls(i, c) = lam.cls * cls_res[l].dlogits[i][c];
    }
    detail::linear_backward(lt.x3, params.cls_head, dcls, dx3, grads->cls_head);

    // Offset head.
    MatrixXd dh2 = MatrixXd::Zero(n, cfg.embed_dim);
    detail::linear_backward(lt.bh2_act, lp.box_out, dlogit, dh2, gp.box_out);
    MatrixXd dh2_pre = dh2.cwiseProduct((1.0 - lt.bh2_act.array().square()).matrix());
    MatrixXd dh1 = MatrixXd::Zero(n, cfg.embed_dim);
    detail::linear_backward(lt.bh1_act, lp.box2, dh2_pre, dh1, gp.box2);
    MatrixXd dh1_pre = dh1.cwiseProduct((1.0 - lt.bh1_act.array().square()).matrix());
    detail::linear_backward(lt.x3, lp.box1, dh1_pre, dx3, gp.box1);

    // FFN sublayer.
    MatrixXd dx_ffn = detail::layernorm_backward(lt.ln3t, lp.ln3, dx3, gp.ln3);
    MatrixXd dx2 = dx_ffn;
    MatrixXd dact = MatrixXd::Zero(n, cfg.ffn_dim);
    detail::linear_backward(lt.ffn_act, lp.ffn2, dx_ffn, dact, gp.ffn2);
    MatrixXd dffn_pre = dact.cwiseProduct((1.0 - lt.ffn_act.array().square()).matrix());
    detail::linear_backward(lt.x2, lp.ffn1, dffn_pre, dx2, gp.ffn1);

    // Cross-attention sublayer.
    MatrixXd dx_ca = detail::layernorm_backward(lt.ln2t, lp.ln2, dx2, gp.ln2);
    MatrixXd dx1 = dx_ca;
    MatrixXd dcctx = MatrixXd::Zero(n, cfg.embed_dim);
    detail::linear_backward(lt.ca_ctx, lp.ca_o, dx_ca, dcctx, gp.ca_o);
    MatrixXd dpc = dcctx * lt.vc.transpose();
    MatrixXd dvc = lt.attn_c.transpose() * dcctx;
    MatrixXd dsc = detail::softmax_rows_backward(lt.attn_c, dpc);
    MatrixXd dqc = dsc * lt.kc * scale;
    MatrixXd dkc = dsc.transpose() * lt.qc * scale;
    detail::linear_backward(lt.x1, lp.ca_q, dqc, dx1, gp.ca_q);
    MatrixXd df_sink = MatrixXd::Zero(features.rows(), cfg.feature_dim);
    detail::linear_backward(features, lp.ca_k, dkc, df_sink, gp.ca_k);
    detail::linear_backward(features, lp.ca_v, dvc, df_sink, gp.ca_v);

    // Masked self-attention sublayer (per block; masked pairs carry no
    // gradient by construction).
    MatrixXd dx_sa = detail::layernorm_backward(lt.ln1t, lp.ln1, dx1, gp.ln1);
    MatrixXd dx_in = dx_sa;
    MatrixXd dsctx = MatrixXd::Zero(n, cfg.embed_dim);
    detail::linear_backward(lt.sa_ctx, lp.sa_o, dx_sa, dsctx, gp.sa_o);
    MatrixXd dq = MatrixXd::Zero(n, cfg.embed_dim);
    MatrixXd dk = MatrixXd::Zero(n, cfg.embed_dim);
    MatrixXd dv = MatrixXd::Zero(n, cfg.embed_dim);
    for (const auto& [b, e] : mask.blocks) {
      const int sz = e - b;
      const MatrixXd p_blk = lt.attn.block(b, b, sz, sz);
      const MatrixXd dp_blk = dsctx.middleRows(b, sz) * lt.v.middleRows(b, sz).transpose();
      const MatrixXd ds_blk = detail::softmax_rows_backward(p_blk, dp_blk);
      dq.middleRows(b, sz) = ds_blk * lt.k.middleRows(b, sz) * scale;
      dk.middleRows(b, sz) = ds_blk.transpose() * lt.q.middleRows(b, sz) * scale;
      dv.middleRows(b, sz) = p_blk.transpose() * dsctx.middleRows(b, sz);
    }
    detail::linear_backward(lt.x_in, lp.sa_q, dq, dx_in, gp.sa_q);
    detail::linear_backward(lt.x_in, lp.sa_k, dk, dx_in, gp.sa_k);
    detail::linear_backward(lt.x_in, lp.sa_v, dv, dx_in, gp.sa_v);

    dx_next = dx_in;
  }

  // Embedding MLP; the positional encoding itself is constant.
  MatrixXd demb_act = MatrixXd::Zero(n, cfg.embed_dim);
  detail::linear_backward(t.emb_act, params.emb2, dx_next, demb_act, grads->emb2);
  MatrixXd demb_pre = demb_act.cwiseProduct((1.0 - t.emb_act.array().square()).matrix());
  MatrixXd dpe_sink = MatrixXd::Zero(n, cfg.embed_dim);
  detail::linear_backward(t.pe, params.emb1, demb_pre, dpe_sink, grads->emb1);

  return out;
}

/// Loss recomputed on the smooth piece fixed by `frozen`: same matches, same
/// position-loss violator sets. This is the function central differences
/// probe when verifying the analytic gradients.
inline double scene_loss_frozen(const SceneFeatures& features, const std::vector<GtObject>& gts,
                                const QueryTeam& team, const ModelParams& params,
                                const AttentionMask& mask, const SceneLossOptions& opts,
                                const FrozenAssignment& frozen) {
  detail::DecodeTrace t;
  detail::forward_trace(features, team, params, mask, t);
  double cls_sum = 0.0, l1_sum = 0.0, giou_sum = 0.0, pos_sum = 0.0;
  for (int l = 0; l < params.cfg.layers; ++l) {
    const auto preds = detail::layer_predictions(t.layers[l]);
    const auto anchors = detail::layer_anchors(t.layers[l]);
    const auto cls = classification_loss(preds, frozen.matches[l], gts, opts.focal);
    const auto box = box_losses(preds, frozen.matches[l], gts);
    cls_sum += cls.value;
    l1_sum += box.l1;
    giou_sum += box.giou;
    pos_sum += detail::frozen_position_value(anchors, preds, frozen.violators[l]);
  }
  return total_loss(cls_sum, l1_sum, giou_sum, pos_sum, opts.lambda).total;
}

}  // namespace qteam
