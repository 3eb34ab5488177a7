//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "eqdiff/net.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "eqdiff/checkpoint.hpp"
#include "test_util.hpp"

using namespace eqdiff;

namespace {

std::vector<LossItem> random_batch(RandomSource &rng,
                                   const NoisePredictorConfig &cfg, int items,
                                   int atoms) {
  std::vector<LossItem> batch;
  for (int i = 0; i < items; ++i) {
    LossItem item;
    item.noised = eqdiff::testing::random_latent(rng, atoms);
    item.eps = eqdiff::testing::random_latent(rng, atoms);
    item.time_scaled = rng.uniform();
    if (cfg.condition_width > 0) {
      item.cond = Vec(cfg.condition_width);
      for (int c = 0; c < cfg.condition_width; ++c)
        item.cond[c] = rng.normal();
    }
    batch.push_back(std::move(item));
  }
  return batch;
}

}  // namespace

TEST_CASE("parameter layout") {
  NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
  auto layout = noise_predictor_layout(cfg);

  SECTION("blocks are disjoint and cover the vector") {
    Eigen::Index expected_offset = 0;
    for (const auto &b : layout.blocks()) {
      REQUIRE(b.offset == expected_offset);
      expected_offset += b.size();
    }
    REQUIRE(expected_offset == layout.total());
  }

  SECTION("total length is a pure function of hyperparameters") {
    auto again = noise_predictor_layout(cfg);
    REQUIRE(again.total() == layout.total());
    NoisePredictorConfig wider { 2, 16, kFeatureWidth, 0 };
    REQUIRE(noise_predictor_layout(wider).total() > layout.total());
  }

  SECTION("block lookup by flat index") {
    REQUIRE(layout.block_of(0) == "embed.w");
    REQUIRE(layout.block_of(layout.total() - 1) == "out.b");
  }
}

TEST_CASE("predict_noise basics") {
  NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
  RandomSource rng(101);

  SECTION("zero parameters give zero outputs") {
    Parameters params { noise_predictor_layout(cfg),
                        Vec::Zero(noise_predictor_layout(cfg).total()) };
    auto g = eqdiff::testing::random_latent(rng, 4);
    auto out = predict_noise(params, cfg, g, 0.5);
    REQUIRE(out.coords.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(out.feats.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("zero weights with output bias propagate the bias per node") {
    auto layout = noise_predictor_layout(cfg);
    Parameters params { layout, Vec::Zero(layout.total()) };
    params.mat("out.b").col(0) << 1, 2, 3, 4, 5, 6;
    auto g = eqdiff::testing::random_latent(rng, 3);
    auto out = predict_noise(params, cfg, g, 0.5);
    REQUIRE(out.coords.cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < kFeatureWidth; ++c)
        REQUIRE(out.feats(i, c) == Catch::Approx(c + 1.0).margin(1e-12));
    }
  }

  SECTION("non-centered input is rejected") {
    auto layout = noise_predictor_layout(cfg);
    auto params = init_parameters(layout, rng);
    auto g = eqdiff::testing::random_latent(rng, 3);
    g.coords.array() += 1.0;
    REQUIRE_THROWS_AS(predict_noise(params, cfg, g, 0.5), InvalidInput);
  }

  SECTION("deterministic within a process") {
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto g = eqdiff::testing::random_latent(rng, 5);
    auto a = predict_noise(params, cfg, g, 0.25);
    auto b = predict_noise(params, cfg, g, 0.25);
    REQUIRE((a.coords - b.coords).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.feats - b.feats).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("translation invariance through centering") {
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto g = eqdiff::testing::random_latent(rng, 4);
    auto shifted = g;
    shifted.coords.rowwise() += Eigen::RowVector3d(3.0, -1.0, 2.0);
    auto recentered = center_of_mass_project(shifted);
    auto a = predict_noise(params, cfg, g, 0.5);
    auto b = predict_noise(params, cfg, recentered, 0.5);
    REQUIRE((a.coords - b.coords).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("predict_noise equivariance") {
  RandomSource rng(202);
  for (int layers = 1; layers <= 3; ++layers) {
    NoisePredictorConfig cfg { layers, 16, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    for (int atoms = 2; atoms <= 6; ++atoms) {
      auto g = eqdiff::testing::random_latent(rng, atoms);
      auto rot = eqdiff::testing::random_rotation(rng);

      auto out = predict_noise(params, cfg, g, 0.3);
      auto out_rot = predict_noise(params, cfg, apply_rotation(g, rot), 0.3);

      Mat expected = out.coords * rot.matrix().transpose();
      double rel = (out_rot.coords - expected).norm() /
                   std::max(expected.norm(), 1e-12);
      REQUIRE(rel < 1e-5);
      REQUIRE((out_rot.feats - out.feats).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("predict_noise permutation equivariance") {
  RandomSource rng(303);
  NoisePredictorConfig cfg { 2, 12, kFeatureWidth, 0 };
  auto params = init_parameters(noise_predictor_layout(cfg), rng);

  const int atoms = 5;
  auto g = eqdiff::testing::random_latent(rng, atoms);
  std::vector<int> perm { 3, 0, 4, 1, 2 };

  MolecularGeometry permuted { Mat(atoms, 3), Mat(atoms, kFeatureWidth), true };
  for (int i = 0; i < atoms; ++i) {
    permuted.coords.row(perm[i]) = g.coords.row(i);
    permuted.feats.row(perm[i]) = g.feats.row(i);
  }

  auto out = predict_noise(params, cfg, g, 0.7);
  auto out_perm = predict_noise(params, cfg, permuted, 0.7);
  for (int i = 0; i < atoms; ++i) {
    REQUIRE((out_perm.coords.row(perm[i]) - out.coords.row(i))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    REQUIRE((out_perm.feats.row(perm[i]) - out.feats.row(i))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
  }
}

TEST_CASE("loss_and_gradient") {
  RandomSource rng(404);

  SECTION("empty batch is rejected") {
    NoisePredictorConfig cfg { 1, 4, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    REQUIRE_THROWS_AS(
        loss_and_gradient(params, cfg, std::span<const LossItem>()),
        InvalidInput);
  }

  SECTION("exact fit gives zero loss and zero gradient") {
    NoisePredictorConfig cfg { 1, 4, kFeatureWidth, 0 };
    auto layout = noise_predictor_layout(cfg);
    Parameters params { layout, Vec::Zero(layout.total()) };
    LossItem item;
    item.noised = eqdiff::testing::random_latent(rng, 1);
    item.eps = MolecularGeometry { Mat::Zero(1, 3),
                                   Mat::Zero(1, kFeatureWidth), true };
    item.time_scaled = 0.5;
    auto result = loss_and_gradient(params, cfg,
                                    std::span<const LossItem>(&item, 1));
    REQUIRE(result.loss == 0.0);
    REQUIRE(result.gradient.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("finite-difference oracle on 50 random parameter coordinates") {
    NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto batch = random_batch(rng, cfg, 2, 3);

    auto analytic = loss_and_gradient(params, cfg, batch);
    const double step = 1e-5;
    int checked = 0;
    for (int rep = 0; rep < 50; ++rep) {
      const auto idx = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::size_t>(params.values.size())));
      Parameters plus = params;
      plus.values[idx] += step;
      Parameters minus = params;
      minus.values[idx] -= step;
      const double numeric = (loss_and_gradient(plus, cfg, batch).loss -
                              loss_and_gradient(minus, cfg, batch).loss) /
                             (2.0 * step);
      const double denom =
          std::max({ std::abs(numeric), std::abs(analytic.gradient[idx]),
                     1e-8 });
      REQUIRE(std::abs(numeric - analytic.gradient[idx]) / denom < 1e-3);
      ++checked;
    }
    REQUIRE(checked == 50);
  }

  SECTION("finite differences with a condition vector") {
    NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 3 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto batch = random_batch(rng, cfg, 1, 3);
    auto analytic = loss_and_gradient(params, cfg, batch);
    const double step = 1e-5;
    for (int rep = 0; rep < 20; ++rep) {
      const auto idx = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::size_t>(params.values.size())));
      Parameters plus = params;
      plus.values[idx] += step;
      Parameters minus = params;
      minus.values[idx] -= step;
      const double numeric = (loss_and_gradient(plus, cfg, batch).loss -
                              loss_and_gradient(minus, cfg, batch).loss) /
                             (2.0 * step);
      const double denom =
          std::max({ std::abs(numeric), std::abs(analytic.gradient[idx]),
                     1e-8 });
      REQUIRE(std::abs(numeric - analytic.gradient[idx]) / denom < 1e-3);
    }
  }

  SECTION("loss is invariant to rotating the noised input and target") {
    NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
    auto params = init_parameters(noise_predictor_layout(cfg), rng);
    auto batch = random_batch(rng, cfg, 3, 4);
    auto rot = eqdiff::testing::random_rotation(rng);
    std::vector<LossItem> rotated;
    for (const auto &item : batch) {
      LossItem r = item;
      r.noised = apply_rotation(item.noised, rot);
      r.eps = apply_rotation(item.eps, rot);
      rotated.push_back(std::move(r));
    }
    const double a = loss_and_gradient(params, cfg, batch).loss;
    const double b = loss_and_gradient(params, cfg, rotated).loss;
    REQUIRE(std::abs(a - b) < 1e-6);
  }

  SECTION("initial loss of a zero predictor is about 1") {
    NoisePredictorConfig cfg { 1, 4, kFeatureWidth, 0 };
    auto layout = noise_predictor_layout(cfg);
    Parameters params { layout, Vec::Zero(layout.total()) };
    auto batch = random_batch(rng, cfg, 400, 3);
    const double loss = loss_and_gradient(params, cfg, batch).loss;
    REQUIRE(loss == Catch::Approx(1.0).margin(0.1));
  }
}

TEST_CASE("optimizers") {
  NoisePredictorConfig cfg { 1, 2, kFeatureWidth, 0 };
  auto layout = noise_predictor_layout(cfg);

  SECTION("sgd one-step arithmetic") {
    Parameters params { layout, Vec::Constant(layout.total(), 1.0) };
    Vec grad = Vec::Constant(layout.total(), 2.0);
    sgd_step(params, grad, SgdConfig { 0.1 });
    REQUIRE(params.values[0] == Catch::Approx(0.8).margin(1e-15));
  }

  SECTION("adam first step matches the hand formula") {
    Parameters params { layout, Vec::Constant(layout.total(), 1.0) };
    Vec grad = Vec::Zero(layout.total());
    grad[0] = 0.3;
    grad[1] = -2.0;
    AdamState state = AdamState::zeros(layout.total());
    AdamConfig acfg; // lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8
    adam_step(params, grad, state, acfg);

    for (int idx : { 0, 1 }) {
      const double g = grad[idx];
      const double m_hat = (1.0 - acfg.beta1) * g / (1.0 - acfg.beta1);
      const double v_hat = (1.0 - acfg.beta2) * g * g / (1.0 - acfg.beta2);
      const double expected =
          1.0 - acfg.learning_rate * m_hat / (std::sqrt(v_hat) + acfg.epsilon);
      REQUIRE(params.values[idx] == Catch::Approx(expected).margin(1e-12));
    }
    REQUIRE(params.values[2] == 1.0);
    REQUIRE(state.step == 1);
  }

  SECTION("zero gradient from a fresh state is a fixed point") {
    Parameters params { layout, Vec::Constant(layout.total(), 0.5) };
    AdamState state = AdamState::zeros(layout.total());
    adam_step(params, Vec::Zero(layout.total()), state, AdamConfig {});
    REQUIRE((params.values.array() == 0.5).all());
    REQUIRE(state.first_moment.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("non-finite gradient names the offending block") {
    Parameters params { layout, Vec::Zero(layout.total()) };
    Vec grad = Vec::Zero(layout.total());
    grad[layout.block("layer0.edge_w2").offset] =
        std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_WITH(sgd_step(params, grad, SgdConfig { 0.1 }),
                        Catch::Matchers::ContainsSubstring("layer0.edge_w2"));
  }
}

TEST_CASE("checkpoint round trip") {
  RandomSource rng(505);
  eqdiff::testing::TempDir tmp("ckpt");

  NoisePredictorConfig cfg { 2, 8, kFeatureWidth, 0 };
  auto params = init_parameters(noise_predictor_layout(cfg), rng);

  TrainingCheckpoint ckpt;
  ckpt.schedule = ScheduleSpec { ScheduleKind::polynomial, 100, 2.0, 1e-5 };
  ckpt.net = cfg;
  ckpt.params = params;
  ckpt.epochs_done = 7;
  AdamState state = AdamState::zeros(params.values.size());
  state.step = 42;
  state.first_moment.setConstant(0.25);
  ckpt.adam = state;
  std::vector<int> sizes { 2, 2, 3, 5 };
  ckpt.histogram = AtomCountHistogram::from_sizes(sizes);

  const auto path = tmp.file("model.ckpt");
  save_training_checkpoint(path, ckpt);
  auto loaded = load_training_checkpoint(path);

  SECTION("parameters are bitwise identical") {
    REQUIRE(loaded.params.values.size() == params.values.size());
    REQUIRE(std::memcmp(loaded.params.values.data(), params.values.data(),
                        sizeof(double) * params.values.size()) == 0);
    REQUIRE(loaded.epochs_done == 7);
    REQUIRE(loaded.net == cfg);
    REQUIRE(loaded.adam.has_value());
    REQUIRE(loaded.adam->step == 42);
    REQUIRE(loaded.histogram.counts() == ckpt.histogram.counts());
    REQUIRE(loaded.histogram.probabilities() ==
            ckpt.histogram.probabilities());
  }

  SECTION("corrupted file fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char byte = 0x5a;
    f.write(&byte, 1);
    f.close();
    REQUIRE_THROWS_AS(load_training_checkpoint(path), CorruptCheckpoint);
  }

  SECTION("regressor checkpoint carries its metadata") {
    RegressorCheckpoint reg;
    reg.cfg = RegressorConfig { 1, 4, kFeatureWidth, 4 };
    reg.params = init_parameters(regressor_layout(reg.cfg), rng);
    reg.property_key = "alpha";
    reg.target_mean = 1.5;
    reg.target_std = 0.4;
    save_regressor_checkpoint(tmp.file("reg.ckpt"), reg);
    auto back = load_regressor_checkpoint(tmp.file("reg.ckpt"));
    REQUIRE(back.property_key == "alpha");
    REQUIRE(back.target_mean == 1.5);
    REQUIRE(back.params.values == reg.params.values);
    REQUIRE_THROWS_AS(load_training_checkpoint(tmp.file("reg.ckpt")),
                      ConfigMismatch);
  }
}

TEST_CASE("regressor gradient check") {
  RandomSource rng(606);
  RegressorConfig cfg { 1, 6, kFeatureWidth, 6 };
  auto params = init_parameters(regressor_layout(cfg), rng);

  auto g1 = eqdiff::testing::random_molecule(rng, 3);
  auto g2 = eqdiff::testing::random_molecule(rng, 4);
  std::vector<RegressorItem> batch { { &g1, 0.7 }, { &g2, -1.2 } };

  auto analytic = regressor_loss_and_gradient(params, cfg, batch);
  const double step = 1e-5;
  for (int rep = 0; rep < 25; ++rep) {
    const auto idx = static_cast<Eigen::Index>(
        rng.uniform_index(static_cast<std::size_t>(params.values.size())));
    Parameters plus = params;
    plus.values[idx] += step;
    Parameters minus = params;
    minus.values[idx] -= step;
    const double numeric =
        (regressor_loss_and_gradient(plus, cfg, batch).loss -
         regressor_loss_and_gradient(minus, cfg, batch).loss) /
        (2.0 * step);
    const double denom = std::max(
        { std::abs(numeric), std::abs(analytic.gradient[idx]), 1e-8 });
    REQUIRE(std::abs(numeric - analytic.gradient[idx]) / denom < 1e-3);
  }

  SECTION("prediction is rotation invariant") {
    auto rot = eqdiff::testing::random_rotation(rng);
    const double a = regressor_forward(params, cfg, g1);
    const double b = regressor_forward(params, cfg, apply_rotation(g1, rot));
    REQUIRE(std::abs(a - b) < 1e-9);
  }
}
