//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_DIFFUSE_HPP_
#define EQDIFF_DIFFUSE_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eqdiff/core.hpp"
#include "eqdiff/geom.hpp"
#include "eqdiff/net.hpp"
#include "eqdiff/schedule.hpp"

namespace eqdiff {

// Labels for independent random streams. Every consumer forks from the run
// seed with one of these, so adding or removing draws in one place never
// shifts another stream.
namespace stream {
inline constexpr std::uint64_t shape = 1;
inline constexpr std::uint64_t chain = 2;
inline constexpr std::uint64_t mix = 3;
inline constexpr std::uint64_t train = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t elbo = 6;
}  // namespace stream

// Standard-normal geometry-shaped noise; the coordinate block is projected
// onto the zero-center-of-mass subspace, features stay unprojected.
inline MolecularGeometry draw_noise(RandomSource &rng, int atoms) {
  Mat coords(atoms, 3);
  for (int i = 0; i < atoms; ++i) {
    for (int c = 0; c < 3; ++c)
      coords(i, c) = rng.normal();
  }
  Mat feats(atoms, kFeatureWidth);
  for (int i = 0; i < atoms; ++i) {
    for (int c = 0; c < kFeatureWidth; ++c)
      feats(i, c) = rng.normal();
  }
  return MolecularGeometry { project_to_zero_mean(coords), std::move(feats),
                             true };
}

// Empirical distribution of training-set atom counts, used to pick M when
// sampling unconditionally.
class AtomCountHistogram {
public:
  AtomCountHistogram() = default;

  AtomCountHistogram(std::vector<int> counts, std::vector<double> probs)
      : counts_(std::move(counts)), probs_(std::move(probs)) {
    if (counts_.empty() || counts_.size() != probs_.size())
      throw InvalidConfig("histogram needs matching counts and probabilities");
    double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-12)
      throw InvalidConfig("histogram probabilities must sum to 1");
  }

  static AtomCountHistogram from_sizes(std::span<const int> sizes) {
    if (sizes.empty())
      throw InvalidConfig("histogram needs at least one size");
    std::vector<int> counts(sizes.begin(), sizes.end());
    std::sort(counts.begin(), counts.end());
    counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
    std::vector<double> probs(counts.size(), 0.0);
    for (int s : sizes) {
      auto it = std::lower_bound(counts.begin(), counts.end(), s);
      probs[static_cast<std::size_t>(it - counts.begin())] +=
          1.0 / static_cast<double>(sizes.size());
    }
    return AtomCountHistogram(std::move(counts), std::move(probs));
  }

  int sample(RandomSource &rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      acc += probs_[i];
      if (u < acc)
        return counts_[i];
    }
    return counts_.back();
  }

  const std::vector<int> &counts() const { return counts_; }
  const std::vector<double> &probabilities() const { return probs_; }

  bool empty() const { return counts_.empty(); }

private:
  std::vector<int> counts_;
  std::vector<double> probs_;
};

struct SamplerConfig {
  const NoiseSchedule *schedule = nullptr;
  const Parameters *params = nullptr;
  const NoisePredictorConfig *net = nullptr;
  AtomCountHistogram histogram;
  std::uint64_t seed = 0;
  int batch_size = 32;
};

// Forward noising: returns the noised geometry together with the injected
// noise so the training loss can use both.
inline std::pair<MolecularGeometry, MolecularGeometry>
forward_noise(const NoiseSchedule &sched, const MolecularGeometry &g_0, int t,
              RandomSource &rng) {
  if (!is_centered(g_0, 1e-6))
    throw InvalidInput("forward_noise requires a centered geometry");
  MolecularGeometry eps = draw_noise(rng, g_0.atom_count());
  MolecularGeometry g_t = marginal_sample(sched, g_0, t, eps);
  return { std::move(g_t), std::move(eps) };
}

// Adapts a trained network to the predictor-callable shape used by the
// reverse chain. Oracle predictors in tests implement the same signature.
struct NetPredictor {
  const Parameters *params = nullptr;
  const NoisePredictorConfig *cfg = nullptr;
  int total_steps = 0;
  Vec cond;

  const NoiseSchedule *schedule = nullptr;

  MolecularGeometry operator()(const MolecularGeometry &g, int t) const {
    return predict_noise(*params, *cfg, g,
                         static_cast<double>(t) / total_steps,
                         schedule->alpha_bar(t), cond);
  }
};

// mu_theta per the epsilon reparameterization of the reverse kernel mean.
template <class Predictor>
MolecularGeometry reverse_mean_with(Predictor &&predict,
                                    const NoiseSchedule &sched,
                                    const MolecularGeometry &g_t, int t) {
  const MolecularGeometry eps_hat = predict(g_t, t);
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  return MolecularGeometry {
    inv_sqrt_alpha * (g_t.coords - coef * eps_hat.coords),
    inv_sqrt_alpha * (g_t.feats - coef * eps_hat.feats),
    g_t.centered,
  };
}

// One reverse step with caller-provided noise; `noise` may be null at t = 1
// where the decoder step is deterministic.
template <class Predictor>
MolecularGeometry reverse_step_with(Predictor &&predict,
                                    const NoiseSchedule &sched,
                                    const MolecularGeometry &g_t, int t,
                                    const MolecularGeometry *noise) {
  if (t < 1 || t > sched.total_steps())
    throw InvalidInput("reverse_step requires 1 <= t <= T");
  if (!is_centered(g_t, 1e-6))
    throw InvalidInput("reverse_step requires a centered latent");

  MolecularGeometry mean = reverse_mean_with(predict, sched, g_t, t);
  if (t == 1)
    return mean;
  if (noise == nullptr)
    throw InternalError("reverse_step at t >= 2 needs noise");
  const double sigma = std::sqrt(sched.posterior_beta(t));
  return MolecularGeometry {
    mean.coords + sigma * noise->coords,
    mean.feats + sigma * noise->feats,
    mean.centered && noise->centered,
  };
}

inline MolecularGeometry reverse_step(const Parameters &params,
                                      const NoisePredictorConfig &cfg,
                                      const NoiseSchedule &sched,
                                      const MolecularGeometry &g_t, int t,
                                      RandomSource &rng,
                                      const Vec &cond = Vec()) {
  NetPredictor predictor { &params, &cfg, sched.total_steps(), cond, &sched };
  if (t >= 2) {
    MolecularGeometry noise = draw_noise(rng, g_t.atom_count());
    return reverse_step_with(predictor, sched, g_t, t, &noise);
  }
  return reverse_step_with(predictor, sched, g_t, t, nullptr);
}

// Full reverse chain from a given terminal latent. noise_at(t) supplies the
// injected noise for steps t >= 2.
template <class Predictor, class NoiseAt>
MolecularGeometry run_reverse_chain(Predictor &&predict,
                                    const NoiseSchedule &sched,
                                    MolecularGeometry g, NoiseAt &&noise_at) {
  for (int t = sched.total_steps(); t >= 1; --t) {
    if (t >= 2) {
      const MolecularGeometry noise = noise_at(t);
      g = reverse_step_with(predict, sched, g, t, &noise);
    } else {
      g = reverse_step_with(predict, sched, g, t, nullptr);
    }
  }
  return g;
}

// Argmax decode of the one-hot block plus nearest-integer charge.
inline MolecularGeometry decode_features(const MolecularGeometry &g) {
  MolecularGeometry out = g;
  for (int i = 0; i < g.atom_count(); ++i) {
    Eigen::Index best = 0;
    g.feats.row(i).head(kElementCount).maxCoeff(&best);
    for (int c = 0; c < kElementCount; ++c)
      out.feats(i, c) = (c == best) ? 1.0 : 0.0;
    out.feats(i, kChargeColumn) = std::round(g.feats(i, kChargeColumn));
  }
  return out;
}

namespace detail {

template <class Work>
void parallel_for_indices(int n, int threads, Work &&work) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i)
      work(i);
    return;
  }
  std::atomic<int> next { 0 };
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        work(i);
    });
  }
  for (auto &th : pool)
    th.join();
}

}  // namespace detail

// Unconditional ancestral sampling. Each molecule consumes only streams
// forked from (seed, index), so parallel and serial execution produce
// identical output.
inline std::vector<MolecularGeometry>
sample_unconditional(const SamplerConfig &cfg, int n, int threads = 1) {
  if (cfg.schedule == nullptr || cfg.params == nullptr || cfg.net == nullptr)
    throw StateError("sampler has no trained predictor loaded");
  if (cfg.params->values.size() == 0)
    throw StateError("sampler has no trained predictor loaded");
  if (cfg.histogram.empty())
    throw StateError("sampler has no atom-count histogram");
  if (n < 0)
    throw InvalidInput("sample count must be non-negative");

  const RandomSource base(cfg.seed);
  std::vector<MolecularGeometry> out(static_cast<std::size_t>(n));
  detail::parallel_for_indices(n, threads, [&](int i) {
    RandomSource shape_rng =
        base.fork(stream::shape, static_cast<std::uint64_t>(i));
    RandomSource chain_rng =
        base.fork(stream::chain, static_cast<std::uint64_t>(i));
    const int atoms = cfg.histogram.sample(shape_rng);

    NetPredictor predictor { cfg.params, cfg.net, cfg.schedule->total_steps(),
                             Vec(), cfg.schedule };
    MolecularGeometry g = draw_noise(chain_rng, atoms);
    g = run_reverse_chain(predictor, *cfg.schedule, std::move(g),
                          [&](int) { return draw_noise(chain_rng, atoms); });
    out[static_cast<std::size_t>(i)] = decode_features(g);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Training loop for the simplified denoising objective.

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct TrainResult {
  std::vector<double> epoch_losses;
  AdamState adam;
  std::uint64_t epochs_done = 0;
};

// Per-item randomness is keyed on (seed, epoch, dataset index) and batches
// accumulate in ascending index order, so the loss sequence is independent
// of shuffling and resuming at `start_epoch` replays the exact run.
inline TrainResult train(Parameters &params, const NoisePredictorConfig &cfg,
                         const NoiseSchedule &sched,
                         std::span<const MolecularGeometry> dataset,
                         const TrainConfig &tc, std::uint64_t start_epoch = 0,
                         AdamState adam = AdamState()) {
  if (dataset.empty())
    throw InvalidInput("training dataset is empty");
  for (const auto &g : dataset) {
    if (!is_centered(g, 1e-6))
      throw InvalidInput("training geometries must be centered");
  }
  if (tc.batch_size < 1)
    throw InvalidConfig("batch size must be positive");

  if (adam.first_moment.size() != params.values.size())
    adam = AdamState::zeros(params.values.size());

  const RandomSource base(tc.seed);
  const int n = static_cast<int>(dataset.size());
  TrainResult result;
  std::uint64_t step_index =
      start_epoch * static_cast<std::uint64_t>((n + tc.batch_size - 1) /
                                               tc.batch_size);

  for (std::uint64_t epoch = start_epoch;
       epoch < static_cast<std::uint64_t>(tc.epochs); ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (tc.shuffle) {
      RandomSource shuffle_rng = base.fork(stream::shuffle, epoch);
      for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(
            shuffle_rng.uniform_index(static_cast<std::size_t>(i + 1)));
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(j)]);
      }
    }

    double epoch_loss = 0.0;
    int epoch_items = 0;
    for (int begin = 0; begin < n; begin += tc.batch_size) {
      const int end = std::min(begin + tc.batch_size, n);
      std::vector<int> indices(order.begin() + begin, order.begin() + end);
      std::sort(indices.begin(), indices.end());

      std::vector<LossItem> batch;
      batch.reserve(indices.size());
      for (int idx : indices) {
        RandomSource item_rng =
            base.fork(stream::train, epoch).fork(static_cast<std::uint64_t>(idx));
        const int t = item_rng.uniform_int(1, sched.total_steps());
        auto [g_t, eps] = forward_noise(sched, dataset[idx], t, item_rng);
        batch.push_back(LossItem {
            std::move(g_t), std::move(eps),
            static_cast<double>(t) / sched.total_steps(),
            sched.alpha_bar(t), Vec() });
      }

      LossResult lr = loss_and_gradient(params, cfg, batch);
      if (!std::isfinite(lr.loss))
        throw TrainingDiverged("non-finite loss at step " +
                               std::to_string(step_index));
      adam_step(params, lr.gradient, adam, tc.adam);
      epoch_loss += lr.loss * static_cast<double>(batch.size());
      epoch_items += static_cast<int>(batch.size());
      ++step_index;
    }
    result.epoch_losses.push_back(epoch_loss / epoch_items);
  }

  result.adam = std::move(adam);
  result.epochs_done = static_cast<std::uint64_t>(tc.epochs);
  return result;
}

// ---------------------------------------------------------------------------
// ELBO-term diagnostics.

// KL between Gaussians with identical isotropic variance.
inline double equal_variance_gaussian_kl(double squared_mean_diff,
                                         double variance) {
  return squared_mean_diff / (2.0 * variance);
}

// Per-step diagnostic terms: index 0 holds the t=1 reconstruction NLL
// (computed with beta_1 variance since the posterior variance vanishes
// there), index t-1 for t >= 2 holds the posterior-vs-model KL at one
// Monte-Carlo draw of G_t. Not a training objective.
template <class Predictor>
Vec elbo_terms_with(Predictor &&predict, const NoiseSchedule &sched,
                    const MolecularGeometry &g_0, RandomSource &rng) {
  const int total = sched.total_steps();
  Vec terms(total);

  const auto elements =
      static_cast<double>(g_0.atom_count() * (3 + kFeatureWidth));

  for (int t = 1; t <= total; ++t) {
    MolecularGeometry noise = draw_noise(rng, g_0.atom_count());
    MolecularGeometry g_t = marginal_sample(sched, g_0, t, noise);
    MolecularGeometry mu_theta = reverse_mean_with(predict, sched, g_t, t);
    if (t == 1) {
      const double var = sched.beta(1);
      const double sq = (g_0.coords - mu_theta.coords).squaredNorm() +
                        (g_0.feats - mu_theta.feats).squaredNorm();
      terms[0] = 0.5 * sq / var +
                 0.5 * elements * std::log(2.0 * M_PI * var);
    } else {
      MolecularGeometry mu_tilde = posterior_mean(sched, g_t, g_0, t);
      const double sq = (mu_tilde.coords - mu_theta.coords).squaredNorm() +
                        (mu_tilde.feats - mu_theta.feats).squaredNorm();
      terms[t - 1] = equal_variance_gaussian_kl(sq, sched.posterior_beta(t));
    }
  }
  return terms;
}

inline Vec elbo_terms(const Parameters &params,
                      const NoisePredictorConfig &cfg,
                      const NoiseSchedule &sched, const MolecularGeometry &g_0,
                      RandomSource &rng, const Vec &cond = Vec()) {
  NetPredictor predictor { &params, &cfg, sched.total_steps(), cond, &sched };
  return elbo_terms_with(predictor, sched, g_0, rng);
}

// Exact-noise oracle: with G_0 known, inverts the closed-form marginal. Its
// reverse mean coincides with the tractable posterior mean, which makes it
// the reference predictor for chain-consistency checks.
struct ExactNoiseOracle {
  const NoiseSchedule *schedule = nullptr;
  const MolecularGeometry *g_0 = nullptr;

  MolecularGeometry operator()(const MolecularGeometry &g_t, int t) const {
    const double bar = schedule->alpha_bar(t);
    const double inv = 1.0 / std::sqrt(1.0 - bar);
    const double scale = std::sqrt(bar);
    return MolecularGeometry {
      inv * (g_t.coords - scale * g_0->coords),
      inv * (g_t.feats - scale * g_0->feats),
      true,
    };
  }
};

}  // namespace eqdiff

#endif  // EQDIFF_DIFFUSE_HPP_
