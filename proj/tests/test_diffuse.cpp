//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "eqdiff/diffuse.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace eqdiff;

namespace {

MolecularGeometry fixed_diatomic(double distance) {
  Mat coords(2, 3);
  coords << distance / 2, 0, 0, -distance / 2, 0, 0;
  std::vector<Element> els { Element::C, Element::C };
  auto g = make_molecule(els, coords);
  g.centered = true;
  return g;
}

struct ZeroPredictor {
  MolecularGeometry operator()(const MolecularGeometry &g, int) const {
    return MolecularGeometry { Mat::Zero(g.coords.rows(), 3),
                               Mat::Zero(g.feats.rows(), kFeatureWidth),
                               true };
  }
};

}  // namespace

TEST_CASE("forward_noise") {
  RandomSource rng(1);

  SECTION("early step stays close to the input") {
    auto s = linear_schedule(2, 1e-4, 2e-4);
    auto g = fixed_diatomic(1.4);
    auto [g_t, eps] = forward_noise(s, g, 1, rng);
    REQUIRE((g_t.coords - g.coords).cwiseAbs().maxCoeff() <
            6.0 * std::sqrt(1e-4));
  }

  SECTION("returned noise reconstructs algebraically") {
    auto s = polynomial_schedule(100, 2.0, 1e-5);
    auto g = eqdiff::testing::random_latent(rng, 4);
    const int t = 37;
    auto [g_t, eps] = forward_noise(s, g, t, rng);
    Mat recon =
        (g_t.coords - std::sqrt(s.alpha_bar(t)) * g.coords) /
        std::sqrt(1.0 - s.alpha_bar(t));
    REQUIRE((recon - eps.coords).cwiseAbs().maxCoeff() < 1e-10);
    Mat recon_h = (g_t.feats - std::sqrt(s.alpha_bar(t)) * g.feats) /
                  std::sqrt(1.0 - s.alpha_bar(t));
    REQUIRE((recon_h - eps.feats).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("terminal step decorrelates from the input") {
    auto s = polynomial_schedule(1000, 2.0, 1e-5);
    auto g = eqdiff::testing::random_latent(rng, 4);
    double cosine_sum = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      auto [g_T, eps] = forward_noise(s, g, 1000, rng);
      const double dot = (g_T.coords.array() * g.coords.array()).sum();
      cosine_sum += dot / (g_T.coords.norm() * g.coords.norm());
    }
    REQUIRE(std::abs(cosine_sum / draws) < 0.05);
  }

  SECTION("non-centered input is rejected") {
    auto s = linear_schedule(4, 0.1, 0.2);
    auto g = fixed_diatomic(1.0);
    g.coords.array() += 1.0;
    REQUIRE_THROWS_AS(forward_noise(s, g, 2, rng), InvalidInput);
  }
}

TEST_CASE("reverse_step") {
  RandomSource rng(2);
  auto s = linear_schedule(10, 0.01, 0.2);

  SECTION("zero predictor on a zero latent leaves posterior-scaled noise") {
    auto zero = fixed_diatomic(0.0);
    zero.coords.setZero();
    const int t = 5;
    const double sigma = std::sqrt(s.posterior_beta(t));
    double mean_acc = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
      auto out = reverse_step_with(ZeroPredictor {}, s, zero, t,
                                   [&] {
                                     static thread_local MolecularGeometry n;
                                     n = draw_noise(rng, 2);
                                     return &n;
                                   }());
      mean_acc += out.feats(0, 0);
    }
    REQUIRE(std::abs(mean_acc / draws) <
            4.0 * sigma / std::sqrt(static_cast<double>(draws)));
  }

  SECTION("exact-noise oracle mean equals the posterior mean") {
    auto g0 = eqdiff::testing::random_latent(rng, 3);
    ExactNoiseOracle oracle { &s, &g0 };
    for (int t : { 2, 5, 10 }) {
      auto [g_t, eps] = forward_noise(s, g0, t, rng);
      auto mu_theta = reverse_mean_with(oracle, s, g_t, t);
      auto mu_tilde = posterior_mean(s, g_t, g0, t);
      REQUIRE((mu_theta.coords - mu_tilde.coords).cwiseAbs().maxCoeff() <
              1e-8);
      REQUIRE((mu_theta.feats - mu_tilde.feats).cwiseAbs().maxCoeff() < 1e-8);
    }

    SECTION("single-atom case") {
      auto g1 = eqdiff::testing::random_latent(rng, 1);
      ExactNoiseOracle oracle1 { &s, &g1 };
      auto [g_t, eps] = forward_noise(s, g1, 4, rng);
      auto mu_theta = reverse_mean_with(oracle1, s, g_t, 4);
      auto mu_tilde = posterior_mean(s, g_t, g1, 4);
      REQUIRE((mu_theta.feats - mu_tilde.feats).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  SECTION("t=1 is deterministic") {
    RandomSource rng_a(77), rng_b(12345);
    NoisePredictorConfig cfg { 1, 8, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto g = eqdiff::testing::random_latent(rng, 3);
    auto a = reverse_step(params, cfg, s, g, 1, rng_a);
    auto b = reverse_step(params, cfg, s, g, 1, rng_b);
    REQUIRE((a.coords - b.coords).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.feats - b.feats).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("step index is validated") {
    NoisePredictorConfig cfg { 1, 4, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto g = eqdiff::testing::random_latent(rng, 2);
    REQUIRE_THROWS_AS(reverse_step(params, cfg, s, g, 0, rng), InvalidInput);
    REQUIRE_THROWS_AS(reverse_step(params, cfg, s, g, 11, rng), InvalidInput);
  }
}

TEST_CASE("oracle reverse chain recovers the clean geometry") {
  RandomSource rng(3);
  auto s = polynomial_schedule(100, 2.0, 1e-5);
  auto g0 = center_of_mass_project(eqdiff::testing::random_molecule(rng, 3));
  ExactNoiseOracle oracle { &s, &g0 };

  double rmsd_sum = 0.0;
  for (int run = 0; run < 5; ++run) {
    auto g = draw_noise(rng, 3);
    auto recovered = run_reverse_chain(
        oracle, s, std::move(g), [&](int) { return draw_noise(rng, 3); });
    rmsd_sum += coordinate_rmsd(recovered.coords, g0.coords);
  }
  REQUIRE(rmsd_sum / 5.0 < 0.05);
}

TEST_CASE("reverse chain keeps the zero center of mass") {
  RandomSource rng(4);
  auto s = polynomial_schedule(300, 2.0, 1e-5);
  NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
  auto params = init_parameters(noise_predictor_layout(cfg), rng);
  NetPredictor predictor { &params, &cfg, s.total_steps(), Vec() };

  auto g = draw_noise(rng, 4);
  double worst = 0.0;
  for (int t = s.total_steps(); t >= 1; --t) {
    if (t >= 2) {
      auto noise = draw_noise(rng, 4);
      g = reverse_step_with(predictor, s, g, t, &noise);
    } else {
      g = reverse_step_with(predictor, s, g, t, nullptr);
    }
    worst = std::max(worst, g.coords.colwise().sum().cwiseAbs().maxCoeff());
  }
  REQUIRE(worst < 1e-6);
}

TEST_CASE("reverse chain marginals match the forward marginals (oracle)") {
  RandomSource rng(5);
  auto s = polynomial_schedule(50, 2.0, 1e-5);
  MolecularGeometry g0 { Mat::Zero(1, 3), Mat::Zero(1, kFeatureWidth), true };
  g0.feats(0, 0) = 1.25;
  ExactNoiseOracle oracle { &s, &g0 };

  const int t_probe = 25;
  const int runs = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int run = 0; run < runs; ++run) {
    auto g = draw_noise(rng, 1);
    for (int t = s.total_steps(); t > t_probe; --t) {
      auto noise = draw_noise(rng, 1);
      g = reverse_step_with(oracle, s, g, t, &noise);
    }
    sum += g.feats(0, 0);
    sum_sq += g.feats(0, 0) * g.feats(0, 0);
  }
  const double mean = sum / runs;
  const double var = sum_sq / runs - mean * mean;
  const double expected_mean = std::sqrt(s.alpha_bar(t_probe)) * 1.25;
  const double expected_var = 1.0 - s.alpha_bar(t_probe);
  REQUIRE(std::abs(mean - expected_mean) < 0.03 * std::abs(expected_mean) +
                                               5.0 / std::sqrt(runs * 1.0));
  REQUIRE(std::abs(var - expected_var) < 0.03 * expected_var +
                                             5.0 / std::sqrt(runs * 1.0));
}

TEST_CASE("generation is equivariant to rotating terminal noise and chain noise") {
  RandomSource rng(6);
  auto s = polynomial_schedule(50, 2.0, 1e-5);
  NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
  auto params = init_parameters(noise_predictor_layout(cfg), rng);
  NetPredictor predictor { &params, &cfg, s.total_steps(), Vec() };

  const int atoms = 4;
  auto g_T = draw_noise(rng, atoms);
  std::vector<MolecularGeometry> noises;
  for (int t = s.total_steps(); t >= 2; --t)
    noises.push_back(draw_noise(rng, atoms));

  auto rot = eqdiff::testing::random_rotation(rng);
  auto g_T_rot = apply_rotation(g_T, rot);
  std::vector<MolecularGeometry> noises_rot;
  for (const auto &n : noises)
    noises_rot.push_back(apply_rotation(n, rot));

  std::size_t cursor = 0;
  auto out = run_reverse_chain(predictor, s, g_T,
                               [&](int) { return noises[cursor++]; });
  cursor = 0;
  auto out_rot = run_reverse_chain(predictor, s, g_T_rot,
                                   [&](int) { return noises_rot[cursor++]; });

  Mat expected = out.coords * rot.matrix().transpose();
  const double rel =
      (out_rot.coords - expected).norm() / std::max(expected.norm(), 1e-12);
  REQUIRE(rel < 1e-4);
  REQUIRE((out_rot.feats - out.feats).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("sample_unconditional") {
  RandomSource rng(7);
  auto s = polynomial_schedule(40, 2.0, 1e-5);
  NoisePredictorConfig cfg { 1, 8, kFeatureWidth, 0 };
  auto params = init_parameters(noise_predictor_layout(cfg), rng);
  std::vector<int> sizes { 2, 2, 3 };
  SamplerConfig sampler { &s, &params, &cfg,
                          AtomCountHistogram::from_sizes(sizes), 99, 32 };

  SECTION("n = 0 gives an empty list") {
    REQUIRE(sample_unconditional(sampler, 0).empty());
  }

  SECTION("same seed twice gives identical geometries") {
    auto a = sample_unconditional(sampler, 6);
    auto b = sample_unconditional(sampler, 6);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].coords == b[i].coords);
      REQUIRE(a[i].feats == b[i].feats);
    }
  }

  SECTION("parallel execution matches serial execution bitwise") {
    auto serial = sample_unconditional(sampler, 8, 1);
    auto parallel = sample_unconditional(sampler, 8, 4);
    for (std::size_t i = 0; i < serial.size(); ++i) {
      REQUIRE(serial[i].coords == parallel[i].coords);
      REQUIRE(serial[i].feats == parallel[i].feats);
    }
  }

  SECTION("outputs are centered and decoded") {
    auto gs = sample_unconditional(sampler, 5);
    for (const auto &g : gs) {
      REQUIRE(is_centered(g, 1e-9));
      REQUIRE(is_decoded(g));
    }
  }

  SECTION("missing predictor is a state error") {
    SamplerConfig broken = sampler;
    broken.params = nullptr;
    REQUIRE_THROWS_AS(sample_unconditional(broken, 1), StateError);
  }
}

TEST_CASE("train") {
  RandomSource rng(8);
  auto s = polynomial_schedule(50, 2.0, 1e-5);
  NoisePredictorConfig cfg { 1, 16, kFeatureWidth, 0 };

  SECTION("overfits a single geometry") {
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    std::vector<MolecularGeometry> data { fixed_diatomic(1.2) };
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 8;
    tc.adam.learning_rate = 5e-3;
    tc.seed = 3;
    auto result = train(params, cfg, s, data, tc);
    REQUIRE(result.epoch_losses.size() == 200);
    REQUIRE(result.epoch_losses.back() < 0.5 * result.epoch_losses.front());
  }

  SECTION("single-batch loss sequence is shuffle independent") {
    std::vector<MolecularGeometry> data;
    for (int i = 0; i < 6; ++i)
      data.push_back(fixed_diatomic(1.0 + 0.1 * i));

    auto run = [&](bool shuffle) {
      RandomSource init_rng(42);
      auto params = init_parameters(noise_predictor_layout(cfg), init_rng);
      TrainConfig tc;
      tc.epochs = 5;
      tc.batch_size = 16; // single batch
      tc.seed = 11;
      tc.shuffle = shuffle;
      return train(params, cfg, s, data, tc).epoch_losses;
    };
    REQUIRE(run(true) == run(false));
  }

  SECTION("resume reproduces an uninterrupted run") {
    std::vector<MolecularGeometry> data;
    for (int i = 0; i < 4; ++i)
      data.push_back(fixed_diatomic(1.0 + 0.2 * i));

    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 2;
    tc.seed = 5;

    RandomSource init_a(9), init_b(9);
    auto params_full = init_parameters(noise_predictor_layout(cfg), init_a);
    train(params_full, cfg, s, data, tc);

    auto params_split = init_parameters(noise_predictor_layout(cfg), init_b);
    TrainConfig first_half = tc;
    first_half.epochs = 6;
    auto mid = train(params_split, cfg, s, data, first_half);
    train(params_split, cfg, s, data, tc, 6, mid.adam);

    REQUIRE(params_full.values == params_split.values);
  }

  SECTION("empty dataset is rejected") {
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    REQUIRE_THROWS_AS(
        train(params, cfg, s, std::span<const MolecularGeometry>(),
              TrainConfig {}),
        InvalidInput);
  }

  SECTION("non-finite loss reports the step") {
    auto layout = noise_predictor_layout(cfg);
    Parameters params { layout, Vec::Zero(layout.total()) };
    params.values[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<MolecularGeometry> data { fixed_diatomic(1.0) };
    TrainConfig tc;
    tc.epochs = 1;
    REQUIRE_THROWS_WITH(train(params, cfg, s, data, tc),
                        Catch::Matchers::ContainsSubstring("step"));
  }
}

TEST_CASE("elbo_terms") {
  RandomSource rng(9);
  auto s = linear_schedule(20, 0.01, 0.2);
  auto g0 = eqdiff::testing::random_latent(rng, 2);

  SECTION("exact-noise oracle zeroes every KL term") {
    ExactNoiseOracle oracle { &s, &g0 };
    RandomSource term_rng(17);
    Vec terms = elbo_terms_with(oracle, s, g0, term_rng);
    for (int t = 2; t <= 20; ++t)
      REQUIRE(terms[t - 1] < 1e-15);
    REQUIRE(std::isfinite(terms[0]));
  }

  SECTION("KL terms are non-negative for a random predictor") {
    NoisePredictorConfig cfg { 1, 8, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    RandomSource term_rng(23);
    Vec terms = elbo_terms(params, cfg, s, g0, term_rng);
    for (int t = 2; t <= 20; ++t)
      REQUIRE(terms[t - 1] >= 0.0);
  }

  SECTION("one-dimensional equal-variance KL") {
    REQUIRE(equal_variance_gaussian_kl(1.0, 0.5) == 1.0);
  }
}
