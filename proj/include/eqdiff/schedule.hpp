//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_SCHEDULE_HPP_
#define EQDIFF_SCHEDULE_HPP_

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eqdiff/core.hpp"
#include "eqdiff/geom.hpp"

namespace eqdiff {

enum class ScheduleKind : int { linear = 1, polynomial = 2 };

// Constructor arguments of a schedule; stored in checkpoints so the full
// sequence can be rederived on load.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::polynomial;
  int total_steps = 1000;
  // linear: p1 = beta_start, p2 = beta_end.
  // polynomial: p1 = exponent, p2 = clip margin s.
  double p1 = 2.0;
  double p2 = 1e-5;
};

// Precomputed variance schedule. All sequences are indexed by step t in
// 1..T through the accessors; nothing is recomputed during sampling.
class NoiseSchedule {
public:
  NoiseSchedule(ScheduleSpec spec, Vec betas): spec_(spec),
                                               betas_(std::move(betas)) {
    const auto T = betas_.size();
    alphas_ = Vec::Ones(T) - betas_;
    alpha_bars_ = Vec(T);
    double acc = 1.0;
    for (Eigen::Index i = 0; i < T; ++i) {
      acc *= alphas_[i];
      alpha_bars_[i] = acc;
    }
    posterior_betas_ = Vec::Zero(T);
    for (Eigen::Index i = 1; i < T; ++i) {
      posterior_betas_[i] =
          (1.0 - alpha_bars_[i - 1]) / (1.0 - alpha_bars_[i]) * betas_[i];
    }
    validate();
  }

  const ScheduleSpec &spec() const { return spec_; }

  int total_steps() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[index(t)]; }

  // Posterior variance (beta tilde); zero at t = 1 by convention
  // (alpha_bar at t = 0 is 1).
  double posterior_beta(int t) const { return posterior_betas_[index(t)]; }

private:
  Eigen::Index index(int t) const {
    if (t < 1 || t > total_steps())
      throw InvalidInput("step index " + std::to_string(t) +
                         " outside 1.." + std::to_string(total_steps()));
    return t - 1;
  }

  void validate() const {
    if (betas_.size() < 2)
      throw InvalidConfig("schedule needs at least 2 steps");
    double prev_bar = 1.0;
    for (Eigen::Index i = 0; i < betas_.size(); ++i) {
      if (!(betas_[i] > 0.0 && betas_[i] < 1.0))
        throw InvalidConfig("beta outside (0,1) at step " +
                            std::to_string(i + 1));
      if (!(alpha_bars_[i] > 0.0 && alpha_bars_[i] < prev_bar))
        throw InvalidConfig("alpha_bar not strictly decreasing at step " +
                            std::to_string(i + 1));
      prev_bar = alpha_bars_[i];
    }
  }

  ScheduleSpec spec_;
  Vec betas_;
  Vec alphas_;
  Vec alpha_bars_;
  Vec posterior_betas_;
};

inline NoiseSchedule linear_schedule(int total_steps, double beta_start,
                                     double beta_end) {
  if (total_steps < 2)
    throw InvalidConfig("schedule needs at least 2 steps");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
    throw InvalidConfig("linear schedule requires 0 < beta_start < beta_end < 1");
  Vec betas(total_steps);
  for (int i = 0; i < total_steps; ++i) {
    betas[i] = beta_start +
               (beta_end - beta_start) * i / static_cast<double>(total_steps - 1);
  }
  return NoiseSchedule(
      ScheduleSpec { ScheduleKind::linear, total_steps, beta_start, beta_end },
      std::move(betas));
}

// alpha_bar follows (1 - (t/T)^exponent)^2, affinely squeezed into
// [s, 1 - s] and renormalized so alpha_bar(0) = 1; betas come from
// consecutive alpha_bar ratios.
inline NoiseSchedule polynomial_schedule(int total_steps, double exponent = 2.0,
                                         double clip = 1e-5) {
  if (total_steps < 2)
    throw InvalidConfig("schedule needs at least 2 steps");
  if (!(exponent >= 1.0))
    throw InvalidConfig("polynomial exponent must be >= 1");
  if (!(clip > 0.0 && clip < 0.5))
    throw InvalidConfig("polynomial clip must lie in (0, 0.5)");

  auto bar = [&](int t) {
    double frac = static_cast<double>(t) / total_steps;
    double raw = 1.0 - std::pow(frac, exponent);
    return (1.0 - 2.0 * clip) * raw * raw + clip;
  };
  const double bar0 = bar(0);
  Vec betas(total_steps);
  double prev = 1.0;
  for (int t = 1; t <= total_steps; ++t) {
    double current = bar(t) / bar0;
    betas[t - 1] = 1.0 - current / prev;
    prev = current;
  }
  return NoiseSchedule(
      ScheduleSpec { ScheduleKind::polynomial, total_steps, exponent, clip },
      std::move(betas));
}

inline NoiseSchedule build_schedule(const ScheduleSpec &spec) {
  switch (spec.kind) {
  case ScheduleKind::linear:
    return linear_schedule(spec.total_steps, spec.p1, spec.p2);
  case ScheduleKind::polynomial:
    return polynomial_schedule(spec.total_steps, spec.p1, spec.p2);
  }
  throw InvalidConfig("unknown schedule kind");
}

namespace detail {

inline void require_same_shape(const MolecularGeometry &a,
                               const MolecularGeometry &b,
                               const char *what) {
  if (a.coords.rows() != b.coords.rows() ||
      a.feats.cols() != b.feats.cols())
    throw InvalidInput(std::string(what) + ": geometry shapes differ");
}

}  // namespace detail

// Mean of the forward-process posterior q(G_{t-1} | G_t, G_0), applied
// elementwise to coordinates and features.
inline MolecularGeometry posterior_mean(const NoiseSchedule &sched,
                                        const MolecularGeometry &g_t,
                                        const MolecularGeometry &g_0, int t) {
  if (t < 2 || t > sched.total_steps())
    throw InvalidInput("posterior_mean requires 2 <= t <= T");
  detail::require_same_shape(g_t, g_0, "posterior_mean");

  const double one_minus_bar = 1.0 - sched.alpha_bar(t);
  const double coeff_0 =
      std::sqrt(sched.alpha_bar(t - 1)) * sched.beta(t) / one_minus_bar;
  const double coeff_t =
      std::sqrt(sched.alpha(t)) * (1.0 - sched.alpha_bar(t - 1)) / one_minus_bar;

  return MolecularGeometry {
    coeff_0 * g_0.coords + coeff_t * g_t.coords,
    coeff_0 * g_0.feats + coeff_t * g_t.feats,
    g_0.centered && g_t.centered,
  };
}

// Closed-form forward marginal: sqrt(alpha_bar_t) G_0 + sqrt(1 - alpha_bar_t)
// times the given noise.
inline MolecularGeometry marginal_sample(const NoiseSchedule &sched,
                                         const MolecularGeometry &g_0, int t,
                                         const MolecularGeometry &noise) {
  if (t < 1 || t > sched.total_steps())
    throw InvalidInput("marginal_sample requires 1 <= t <= T");
  detail::require_same_shape(g_0, noise, "marginal_sample");

  const double scale_0 = std::sqrt(sched.alpha_bar(t));
  const double scale_n = std::sqrt(1.0 - sched.alpha_bar(t));
  return MolecularGeometry {
    scale_0 * g_0.coords + scale_n * noise.coords,
    scale_0 * g_0.feats + scale_n * noise.feats,
    g_0.centered && noise.centered,
  };
}

}  // namespace eqdiff

#endif  // EQDIFF_SCHEDULE_HPP_
