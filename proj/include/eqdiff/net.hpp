//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_NET_HPP_
#define EQDIFF_NET_HPP_

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eqdiff/core.hpp"
#include "eqdiff/geom.hpp"

namespace eqdiff {

// ---------------------------------------------------------------------------
// Flat parameter vector with a named-block layout.

enum class BlockInit { glorot, zero };

struct ParameterBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  BlockInit init = BlockInit::glorot;

  Eigen::Index size() const { return rows * cols; }
};

class ParameterLayout {
public:
  void add(std::string name, Eigen::Index rows, Eigen::Index cols,
           BlockInit init = BlockInit::glorot) {
    blocks_.push_back(
        ParameterBlock { std::move(name), total_, rows, cols, init });
    total_ += rows * cols;
  }

  const ParameterBlock &block(std::string_view name) const {
    for (const auto &b : blocks_) {
      if (b.name == name)
        return b;
    }
    throw InternalError("unknown parameter block '" + std::string(name) + "'");
  }

  // Name of the block containing flat index i.
  const std::string &block_of(Eigen::Index i) const {
    for (const auto &b : blocks_) {
      if (i >= b.offset && i < b.offset + b.size())
        return b.name;
    }
    throw InternalError("parameter index out of range");
  }

  const std::vector<ParameterBlock> &blocks() const { return blocks_; }

  Eigen::Index total() const { return total_; }

private:
  std::vector<ParameterBlock> blocks_;
  Eigen::Index total_ = 0;
};

struct Parameters {
  ParameterLayout layout;
  Vec values;

  Eigen::Map<const Mat> mat(std::string_view name) const {
    const auto &b = layout.block(name);
    return Eigen::Map<const Mat>(values.data() + b.offset, b.rows, b.cols);
  }

  Eigen::Map<Mat> mat(std::string_view name) {
    const auto &b = layout.block(name);
    return Eigen::Map<Mat>(values.data() + b.offset, b.rows, b.cols);
  }
};

inline Parameters init_parameters(const ParameterLayout &layout,
                                  RandomSource &rng) {
  Parameters params { layout, Vec::Zero(layout.total()) };
  for (const auto &b : layout.blocks()) {
    if (b.init == BlockInit::zero)
      continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
    for (Eigen::Index i = 0; i < b.size(); ++i)
      params.values[b.offset + i] = rng.uniform_in(-limit, limit);
  }
  return params;
}

// ---------------------------------------------------------------------------
// E(n)-equivariant graph network core, shared by the noise predictor and the
// property regressor. Forward caches every intermediate needed by the
// hand-written reverse pass.

struct EgnnConfig {
  int layers = 4;
  int hidden = 64;
  int node_input = kFeatureWidth + 1;
  // Gaussian radial-basis expansion of the pair distance fed to the edge
  // MLP next to the raw squared distance; the raw scalar alone spans two
  // orders of magnitude across noise levels and starves the edge MLP of
  // resolution where the bond-length structure lives.
  int distance_rbf = 16;
  double rbf_max = 8.0;

  int edge_input(int) const { return 2 * hidden + 1 + distance_rbf; }

  void validate() const {
    if (layers < 1 || hidden < 1 || node_input < 1 || distance_rbf < 0 ||
        rbf_max <= 0.0)
      throw InvalidConfig("EGNN needs layers >= 1, hidden >= 1, inputs >= 1");
  }
};

namespace detail {

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline Mat silu(const Mat &m) {
  return m.unaryExpr([](double x) { return silu(x); });
}

inline Mat silu_grad(const Mat &m) {
  return m.unaryExpr([](double x) { return silu_grad(x); });
}

inline void add_egnn_blocks(ParameterLayout &layout, const EgnnConfig &cfg) {
  const int h = cfg.hidden;
  layout.add("embed.w", h, cfg.node_input);
  layout.add("embed.b", h, 1, BlockInit::zero);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    layout.add(p + "edge_w1", h, 2 * h + 1 + cfg.distance_rbf);
    layout.add(p + "edge_b1", h, 1, BlockInit::zero);
    layout.add(p + "edge_w2", h, h);
    layout.add(p + "edge_b2", h, 1, BlockInit::zero);
    layout.add(p + "coord_w1", h, h);
    layout.add(p + "coord_b1", h, 1, BlockInit::zero);
    // Zero init keeps the untrained network close to the identity map on
    // coordinates.
    layout.add(p + "coord_w2", 1, h, BlockInit::zero);
    layout.add(p + "coord_b2", 1, 1, BlockInit::zero);
    layout.add(p + "node_w1", h, 2 * h);
    layout.add(p + "node_b1", h, 1, BlockInit::zero);
    layout.add(p + "node_w2", h, h);
    layout.add(p + "node_b2", h, 1, BlockInit::zero);
  }
}

struct EgnnLayerCache {
  Mat x_in;          // M x 3
  Mat h_in;          // M x H
  Mat r_edges;       // E x 3, x_i - x_j per edge
  Vec dist;          // E
  Vec inv_dist;      // E, 1 / (dist + 1)
  Mat edge_in;       // E x (2H + 1 + K)
  Mat edge_z1_pre;   // E x H
  Mat edge_z1;       // E x H
  Mat edge_m_pre;    // E x H
  Mat edge_m;        // E x H
  Mat coord_z_pre;   // E x H
  Mat coord_z;       // E x H
  Vec coord_s;       // E
  Mat agg;           // M x H
  Mat node_in;       // M x 2H
  Mat node_z_pre;    // M x H
  Mat node_z;        // M x H
};

struct EgnnCache {
  std::vector<std::pair<int, int>> edges;
  Mat node_raw;      // M x node_input
  std::vector<EgnnLayerCache> layers;
  Mat x_out;         // M x 3
  Mat h_out;         // M x H
};

inline std::vector<std::pair<int, int>> fully_connected_edges(int atoms) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<std::size_t>(atoms) * (atoms - 1));
  for (int i = 0; i < atoms; ++i) {
    for (int j = 0; j < atoms; ++j) {
      if (i != j)
        edges.emplace_back(i, j);
    }
  }
  return edges;
}

inline EgnnCache egnn_forward(const Parameters &params, const EgnnConfig &cfg,
                              const Mat &coords, const Mat &node_raw) {
  const int atoms = static_cast<int>(coords.rows());
  const int h = cfg.hidden;

  EgnnCache cache;
  cache.edges = fully_connected_edges(atoms);
  cache.node_raw = node_raw;
  const auto n_edges = static_cast<Eigen::Index>(cache.edges.size());

  Mat x = coords;
  Mat hidden = (node_raw * params.mat("embed.w").transpose()).rowwise() +
               params.mat("embed.b").col(0).transpose();

  cache.layers.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto &lc = cache.layers[l];
    lc.x_in = x;
    lc.h_in = hidden;

    const int rbf = cfg.distance_rbf;
    const double rbf_step = rbf > 0 ? cfg.rbf_max / rbf : 1.0;
    lc.r_edges = Mat(n_edges, 3);
    lc.dist = Vec(n_edges);
    lc.inv_dist = Vec(n_edges);
    lc.edge_in = Mat(n_edges, 2 * h + 1 + rbf);
    for (Eigen::Index e = 0; e < n_edges; ++e) {
      const auto [i, j] = cache.edges[e];
      lc.r_edges.row(e) = x.row(i) - x.row(j);
      const double d2 = lc.r_edges.row(e).squaredNorm();
      lc.dist[e] = std::sqrt(d2);
      lc.inv_dist[e] = 1.0 / (lc.dist[e] + 1.0);
      lc.edge_in.row(e).head(h) = hidden.row(i);
      lc.edge_in.row(e).segment(h, h) = hidden.row(j);
      lc.edge_in(e, 2 * h) = d2;
      for (int k = 0; k < rbf; ++k) {
        const double center = (k + 0.5) * rbf_step;
        const double z = (lc.dist[e] - center) / rbf_step;
        lc.edge_in(e, 2 * h + 1 + k) = std::exp(-0.5 * z * z);
      }
    }

    lc.edge_z1_pre = (lc.edge_in * params.mat(p + "edge_w1").transpose())
                         .rowwise() +
                     params.mat(p + "edge_b1").col(0).transpose();
    lc.edge_z1 = silu(lc.edge_z1_pre);
    lc.edge_m_pre = (lc.edge_z1 * params.mat(p + "edge_w2").transpose())
                        .rowwise() +
                    params.mat(p + "edge_b2").col(0).transpose();
    lc.edge_m = silu(lc.edge_m_pre);

    lc.coord_z_pre = (lc.edge_m * params.mat(p + "coord_w1").transpose())
                         .rowwise() +
                     params.mat(p + "coord_b1").col(0).transpose();
    lc.coord_z = silu(lc.coord_z_pre);
    lc.coord_s = lc.coord_z * params.mat(p + "coord_w2").row(0).transpose();
    lc.coord_s.array() += params.mat(p + "coord_b2")(0, 0);

    Mat x_next = x;
    lc.agg = Mat::Zero(atoms, h);
    for (Eigen::Index e = 0; e < n_edges; ++e) {
      const auto [i, j] = cache.edges[e];
      x_next.row(i) +=
          lc.r_edges.row(e) * (lc.inv_dist[e] * lc.coord_s[e]);
      lc.agg.row(i) += lc.edge_m.row(e);
    }

    lc.node_in = Mat(atoms, 2 * h);
    lc.node_in.leftCols(h) = hidden;
    lc.node_in.rightCols(h) = lc.agg;
    lc.node_z_pre = (lc.node_in * params.mat(p + "node_w1").transpose())
                        .rowwise() +
                    params.mat(p + "node_b1").col(0).transpose();
    lc.node_z = silu(lc.node_z_pre);
    Mat h_next = hidden +
                 ((lc.node_z * params.mat(p + "node_w2").transpose())
                      .rowwise() +
                  params.mat(p + "node_b2").col(0).transpose());

    x = std::move(x_next);
    hidden = std::move(h_next);
  }

  cache.x_out = std::move(x);
  cache.h_out = std::move(hidden);
  return cache;
}

// Accumulates parameter gradients for the cached forward pass given the
// adjoints of the final coordinates and final hidden features.
inline void egnn_backward(const Parameters &params, const EgnnConfig &cfg,
                          const EgnnCache &cache, Mat d_x, Mat d_h,
                          Vec &grad) {
  const int h = cfg.hidden;
  const auto n_edges = static_cast<Eigen::Index>(cache.edges.size());

  auto grad_mat = [&](const std::string &name) {
    const auto &b = params.layout.block(name);
    return Eigen::Map<Mat>(grad.data() + b.offset, b.rows, b.cols);
  };

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const auto &lc = cache.layers[l];

    // Node MLP (residual update).
    grad_mat(p + "node_w2").noalias() += d_h.transpose() * lc.node_z;
    grad_mat(p + "node_b2").col(0) += d_h.colwise().sum().transpose();
    Mat d_nz_pre = (d_h * params.mat(p + "node_w2"))
                       .cwiseProduct(silu_grad(lc.node_z_pre));
    grad_mat(p + "node_w1").noalias() += d_nz_pre.transpose() * lc.node_in;
    grad_mat(p + "node_b1").col(0) += d_nz_pre.colwise().sum().transpose();
    Mat d_node_in = d_nz_pre * params.mat(p + "node_w1");

    Mat d_h_in = d_h + d_node_in.leftCols(h);
    Mat d_agg = d_node_in.rightCols(h);

    // Coordinate update and message aggregation adjoints.
    Mat d_x_in = d_x;
    Mat d_msg(n_edges, h);
    Vec d_s(n_edges);
    for (Eigen::Index e = 0; e < n_edges; ++e) {
      const auto [i, j] = cache.edges[e];
      d_msg.row(e) = d_agg.row(i);

      const auto r = lc.r_edges.row(e);
      const double g_dot_r = d_x.row(i).dot(r);
      d_s[e] = lc.inv_dist[e] * g_dot_r;

      Eigen::RowVector3d d_r =
          (lc.inv_dist[e] * lc.coord_s[e]) * d_x.row(i);
      if (lc.dist[e] > 1e-12) {
        const double denom = lc.dist[e] * (1.0 + lc.dist[e]) *
                             (1.0 + lc.dist[e]);
        d_r -= (lc.coord_s[e] * g_dot_r / denom) * r;
      }
      d_x_in.row(i) += d_r;
      d_x_in.row(j) -= d_r;
    }

    // Coordinate MLP.
    grad_mat(p + "coord_w2").row(0) += d_s.transpose() * lc.coord_z;
    grad_mat(p + "coord_b2")(0, 0) += d_s.sum();
    Mat d_cz_pre = (d_s * params.mat(p + "coord_w2"))
                       .cwiseProduct(silu_grad(lc.coord_z_pre));
    grad_mat(p + "coord_w1").noalias() += d_cz_pre.transpose() * lc.edge_m;
    grad_mat(p + "coord_b1").col(0) += d_cz_pre.colwise().sum().transpose();
    d_msg.noalias() += d_cz_pre * params.mat(p + "coord_w1");

    // Edge MLP.
    Mat d_m_pre = d_msg.cwiseProduct(silu_grad(lc.edge_m_pre));
    grad_mat(p + "edge_w2").noalias() += d_m_pre.transpose() * lc.edge_z1;
    grad_mat(p + "edge_b2").col(0) += d_m_pre.colwise().sum().transpose();
    Mat d_z1_pre = (d_m_pre * params.mat(p + "edge_w2"))
                       .cwiseProduct(silu_grad(lc.edge_z1_pre));
    grad_mat(p + "edge_w1").noalias() += d_z1_pre.transpose() * lc.edge_in;
    grad_mat(p + "edge_b1").col(0) += d_z1_pre.colwise().sum().transpose();
    Mat d_edge_in = d_z1_pre * params.mat(p + "edge_w1");

    const int rbf = cfg.distance_rbf;
    const double rbf_step = rbf > 0 ? cfg.rbf_max / rbf : 1.0;
    for (Eigen::Index e = 0; e < n_edges; ++e) {
      const auto [i, j] = cache.edges[e];
      d_h_in.row(i) += d_edge_in.row(e).head(h);
      d_h_in.row(j) += d_edge_in.row(e).segment(h, h);
      const double d_d2 = d_edge_in(e, 2 * h);
      Eigen::RowVector3d d_r = 2.0 * d_d2 * lc.r_edges.row(e);
      if (rbf > 0 && lc.dist[e] > 1e-12) {
        double d_dist = 0.0;
        for (int k = 0; k < rbf; ++k) {
          const double center = (k + 0.5) * rbf_step;
          const double z = (lc.dist[e] - center) / rbf_step;
          d_dist += d_edge_in(e, 2 * h + 1 + k) *
                    (-z / rbf_step) * std::exp(-0.5 * z * z);
        }
        d_r += (d_dist / lc.dist[e]) * lc.r_edges.row(e);
      }
      d_x_in.row(i) += d_r;
      d_x_in.row(j) -= d_r;
    }

    d_x = std::move(d_x_in);
    d_h = std::move(d_h_in);
  }

  grad_mat("embed.w").noalias() += d_h.transpose() * cache.node_raw;
  grad_mat("embed.b").col(0) += d_h.colwise().sum().transpose();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Noise predictor eps_theta.

struct NoisePredictorConfig {
  int layers = 4;
  int hidden = 64;
  int feature_width = kFeatureWidth;
  int condition_width = 0;
  // Fourier pairs sin/cos(2^k pi t/T) appended next to the raw t/T scalar
  // and three noise-level inputs derived from alpha_bar_t. The plain scalar
  // alone cannot resolve the sharp 1/sqrt(1 - alpha_bar) amplification of
  // the noise target near t = 0.
  int time_fourier = 6;
  int distance_rbf = 16;

  // Per-node input: features, then the time encoding, then the condition
  // embedding when present.
  int time_width() const { return 4 + 2 * time_fourier; }

  int node_input() const {
    return feature_width + time_width() + condition_width;
  }

  EgnnConfig core() const {
    return EgnnConfig { layers, hidden, node_input(), distance_rbf };
  }

  void validate() const {
    if (layers < 1 || hidden < 1 || feature_width < 1 ||
        condition_width < 0 || time_fourier < 0)
      throw InvalidConfig("invalid noise predictor configuration");
  }

  bool operator==(const NoisePredictorConfig &) const = default;
};

inline ParameterLayout noise_predictor_layout(const NoisePredictorConfig &cfg) {
  cfg.validate();
  ParameterLayout layout;
  detail::add_egnn_blocks(layout, cfg.core());
  layout.add("out.w", cfg.feature_width, cfg.hidden);
  layout.add("out.b", cfg.feature_width, 1, BlockInit::zero);
  return layout;
}

namespace detail {

inline Mat predictor_node_raw(const NoisePredictorConfig &cfg,
                              const MolecularGeometry &g, double time_scaled,
                              double alpha_bar, const Vec &cond) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0))
    throw InvalidInput("alpha_bar must lie in (0, 1)");
  if (g.atom_count() < 1)
    throw InvalidInput("predict_noise requires at least one atom");
  if (!is_centered(g, 1e-6))
    throw InvalidInput("predict_noise requires a centered geometry");
  if (g.feats.cols() != cfg.feature_width)
    throw InvalidInput("feature width mismatch");
  if (cond.size() != cfg.condition_width)
    throw InvalidInput("condition width mismatch");

  const int atoms = g.atom_count();
  Mat raw(atoms, cfg.node_input());
  raw.leftCols(cfg.feature_width) = g.feats;
  raw.col(cfg.feature_width).setConstant(time_scaled);
  raw.col(cfg.feature_width + 1).setConstant(std::sqrt(alpha_bar));
  raw.col(cfg.feature_width + 2).setConstant(std::sqrt(1.0 - alpha_bar));
  raw.col(cfg.feature_width + 3)
      .setConstant(std::log(1.0 - alpha_bar) / 8.0);
  for (int k = 0; k < cfg.time_fourier; ++k) {
    const double phase = std::pow(2.0, k) * M_PI * time_scaled;
    raw.col(cfg.feature_width + 4 + 2 * k).setConstant(std::sin(phase));
    raw.col(cfg.feature_width + 5 + 2 * k).setConstant(std::cos(phase));
  }
  const int cond_base = cfg.feature_width + cfg.time_width();
  for (int c = 0; c < cfg.condition_width; ++c)
    raw.col(cond_base + c).setConstant(cond[c]);
  return raw;
}

}  // namespace detail

// Predicted noise (a^x, a^h) for a noised geometry at scaled time
// t/T. The coordinate output is the accumulated displacement projected to
// zero center of mass; the feature output is a linear readout of the final
// node embeddings.
inline MolecularGeometry predict_noise(const Parameters &params,
                                       const NoisePredictorConfig &cfg,
                                       const MolecularGeometry &g,
                                       double time_scaled, double alpha_bar,
                                       const Vec &cond = Vec()) {
  Mat raw = detail::predictor_node_raw(cfg, g, time_scaled, alpha_bar, cond);
  detail::EgnnCache cache = detail::egnn_forward(params, cfg.core(),
                                                 g.coords, raw);
  Mat a_x = project_to_zero_mean(cache.x_out - g.coords);
  Mat a_h = (cache.h_out * params.mat("out.w").transpose()).rowwise() +
            params.mat("out.b").col(0).transpose();
  return MolecularGeometry { std::move(a_x), std::move(a_h), true };
}

// One training example for the simplified denoising loss: the noised
// geometry, the noise that produced it, and the scaled time.
struct LossItem {
  MolecularGeometry noised;
  MolecularGeometry eps;
  double time_scaled = 0.0;
  double alpha_bar = 0.5;
  Vec cond;
};

struct LossResult {
  double loss = 0.0;
  Vec gradient;
};

// Squared error between injected and predicted noise, normalized per item by
// the degrees of freedom 3(M-1) + M*k (the coordinate block lives in the
// zero-center-of-mass subspace).
inline LossResult loss_and_gradient(const Parameters &params,
                                    const NoisePredictorConfig &cfg,
                                    std::span<const LossItem> batch) {
  if (batch.empty())
    throw InvalidInput("loss_and_gradient requires a non-empty batch");

  LossResult result;
  result.gradient = Vec::Zero(params.layout.total());
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const auto &item : batch) {
    const int atoms = item.noised.atom_count();
    const double dof = 3.0 * (atoms - 1) + static_cast<double>(atoms) *
                       cfg.feature_width;
    Mat raw = detail::predictor_node_raw(cfg, item.noised, item.time_scaled,
                                         item.alpha_bar, item.cond);
    detail::EgnnCache cache = detail::egnn_forward(params, cfg.core(),
                                                   item.noised.coords, raw);
    Mat a_x = project_to_zero_mean(cache.x_out - item.noised.coords);
    Mat a_h = (cache.h_out * params.mat("out.w").transpose()).rowwise() +
              params.mat("out.b").col(0).transpose();

    Mat resid_x = a_x - item.eps.coords;
    Mat resid_h = a_h - item.eps.feats;
    result.loss +=
        (resid_x.squaredNorm() + resid_h.squaredNorm()) / dof * inv_batch;

    const double scale = 2.0 * inv_batch / dof;
    Mat d_a_x = scale * resid_x;
    Mat d_a_h = scale * resid_h;

    auto grad_mat = [&](const std::string &name) {
      const auto &b = params.layout.block(name);
      return Eigen::Map<Mat>(result.gradient.data() + b.offset, b.rows,
                             b.cols);
    };
    grad_mat("out.w").noalias() += d_a_h.transpose() * cache.h_out;
    grad_mat("out.b").col(0) += d_a_h.colwise().sum().transpose();
    Mat d_h_out = d_a_h * params.mat("out.w");
    Mat d_x_out = project_to_zero_mean(d_a_x);
    detail::egnn_backward(params, cfg.core(), cache, std::move(d_x_out),
                          std::move(d_h_out), result.gradient);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Optimizers.

struct SgdConfig {
  double learning_rate = 1e-2;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Vec first_moment;
  Vec second_moment;
  std::int64_t step = 0;

  static AdamState zeros(Eigen::Index n) {
    return AdamState { Vec::Zero(n), Vec::Zero(n), 0 };
  }
};

namespace detail {

inline void require_finite_gradient(const ParameterLayout &layout,
                                    const Vec &grad) {
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw TrainingDiverged("non-finite gradient in block '" +
                             layout.block_of(i) + "'");
  }
}

}  // namespace detail

inline void sgd_step(Parameters &params, const Vec &grad,
                     const SgdConfig &cfg) {
  if (grad.size() != params.values.size())
    throw InvalidInput("gradient length mismatch");
  detail::require_finite_gradient(params.layout, grad);
  params.values -= cfg.learning_rate * grad;
}

inline void adam_step(Parameters &params, const Vec &grad, AdamState &state,
                      const AdamConfig &cfg) {
  if (grad.size() != params.values.size())
    throw InvalidInput("gradient length mismatch");
  detail::require_finite_gradient(params.layout, grad);
  if (state.first_moment.size() != grad.size())
    state = AdamState::zeros(grad.size());

  ++state.step;
  state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * grad;
  state.second_moment = cfg.beta2 * state.second_moment +
                        (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double bias1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bias2 = 1.0 - std::pow(cfg.beta2, state.step);
  params.values.array() -=
      cfg.learning_rate * (state.first_moment.array() / bias1) /
      ((state.second_moment.array() / bias2).sqrt() + cfg.epsilon);
}

// ---------------------------------------------------------------------------
// Invariant property regressor phi_p: EGNN trunk, sum readout, 2-layer head.

struct RegressorConfig {
  int layers = 2;
  int hidden = 32;
  int feature_width = kFeatureWidth;
  int head_hidden = 32;
  int distance_rbf = 16;

  EgnnConfig core() const {
    return EgnnConfig { layers, hidden, feature_width, distance_rbf };
  }

  void validate() const {
    if (layers < 1 || hidden < 1 || feature_width < 1 || head_hidden < 1)
      throw InvalidConfig("invalid regressor configuration");
  }

  bool operator==(const RegressorConfig &) const = default;
};

inline ParameterLayout regressor_layout(const RegressorConfig &cfg) {
  cfg.validate();
  ParameterLayout layout;
  detail::add_egnn_blocks(layout, cfg.core());
  layout.add("head.w1", cfg.head_hidden, cfg.hidden);
  layout.add("head.b1", cfg.head_hidden, 1, BlockInit::zero);
  layout.add("head.w2", 1, cfg.head_hidden);
  layout.add("head.b2", 1, 1, BlockInit::zero);
  return layout;
}

inline double regressor_forward(const Parameters &params,
                                const RegressorConfig &cfg,
                                const MolecularGeometry &g,
                                detail::EgnnCache *cache_out = nullptr) {
  if (g.feats.cols() != cfg.feature_width)
    throw InvalidInput("feature width mismatch");
  detail::EgnnCache cache = detail::egnn_forward(params, cfg.core(), g.coords,
                                                 g.feats);
  Eigen::RowVectorXd pooled = cache.h_out.colwise().sum();
  Eigen::RowVectorXd z_pre =
      pooled * params.mat("head.w1").transpose() +
      params.mat("head.b1").col(0).transpose();
  Eigen::RowVectorXd z = z_pre.unaryExpr(
      [](double x) { return detail::silu(x); });
  const double out = z.dot(params.mat("head.w2").row(0)) +
                     params.mat("head.b2")(0, 0);
  if (cache_out != nullptr)
    *cache_out = std::move(cache);
  return out;
}

struct RegressorItem {
  const MolecularGeometry *geometry = nullptr;
  double target = 0.0;
};

// Mean squared error over the batch and its parameter gradient.
inline LossResult regressor_loss_and_gradient(const Parameters &params,
                                              const RegressorConfig &cfg,
                                              std::span<const RegressorItem> batch) {
  if (batch.empty())
    throw InvalidInput("regressor batch must be non-empty");

  LossResult result;
  result.gradient = Vec::Zero(params.layout.total());
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const auto &item : batch) {
    detail::EgnnCache cache;
    const double pred = regressor_forward(params, cfg, *item.geometry, &cache);
    const double resid = pred - item.target;
    result.loss += resid * resid * inv_batch;
    const double d_pred = 2.0 * resid * inv_batch;

    auto grad_mat = [&](const std::string &name) {
      const auto &b = params.layout.block(name);
      return Eigen::Map<Mat>(result.gradient.data() + b.offset, b.rows,
                             b.cols);
    };
    Eigen::RowVectorXd pooled = cache.h_out.colwise().sum();
    Eigen::RowVectorXd z_pre =
        pooled * params.mat("head.w1").transpose() +
        params.mat("head.b1").col(0).transpose();
    Eigen::RowVectorXd z = z_pre.unaryExpr(
        [](double x) { return detail::silu(x); });

    grad_mat("head.w2").row(0) += d_pred * z;
    grad_mat("head.b2")(0, 0) += d_pred;
    Eigen::RowVectorXd d_z = d_pred * params.mat("head.w2").row(0);
    Eigen::RowVectorXd d_z_pre = d_z.cwiseProduct(z_pre.unaryExpr(
        [](double x) { return detail::silu_grad(x); }));
    grad_mat("head.w1").noalias() += d_z_pre.transpose() * pooled;
    grad_mat("head.b1").col(0) += d_z_pre.transpose();
    Eigen::RowVectorXd d_pooled = d_z_pre * params.mat("head.w1");

    Mat d_h_out = d_pooled.replicate(cache.h_out.rows(), 1);
    Mat d_x_out = Mat::Zero(cache.x_out.rows(), 3);
    detail::egnn_backward(params, cfg.core(), cache, std::move(d_x_out),
                          std::move(d_h_out), result.gradient);
  }
  return result;
}

}  // namespace eqdiff

#endif  // EQDIFF_NET_HPP_
