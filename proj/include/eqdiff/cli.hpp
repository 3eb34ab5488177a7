//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_CLI_HPP_
#define EQDIFF_CLI_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eqdiff/checkpoint.hpp"
#include "eqdiff/condition.hpp"
#include "eqdiff/core.hpp"
#include "eqdiff/data.hpp"
#include "eqdiff/diffuse.hpp"
#include "eqdiff/geom.hpp"
#include "eqdiff/metrics.hpp"
#include "eqdiff/net.hpp"
#include "eqdiff/schedule.hpp"

namespace eqdiff::cli {

// Documented exit codes: 0 ok, 2 usage or bad configuration, 3 diverged
// training, 4 corrupt checkpoint, 5 unparseable prompt, 6 config mismatch,
// 1 any other failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitCorrupt = 4;
inline constexpr int kExitUnparseable = 5;
inline constexpr int kExitMismatch = 6;

inline int exit_code_for(const Error &error) {
  switch (error.code()) {
  case ErrorCode::training_diverged: return kExitDiverged;
  case ErrorCode::corrupt_checkpoint: return kExitCorrupt;
  case ErrorCode::unparseable_prompt: return kExitUnparseable;
  case ErrorCode::config_mismatch: return kExitMismatch;
  case ErrorCode::invalid_config: return kExitUsage;
  default: return kExitFailure;
  }
}

namespace detail {

inline void prepare_output_dir(const std::string &out,
                               const std::string &config_file) {
  std::filesystem::create_directories(out);
  if (!config_file.empty()) {
    // Verbatim provenance copy of the run configuration.
    std::ifstream in(config_file, std::ios::binary);
    if (!in)
      throw IoError("cannot read config file '" + config_file + "'");
    std::ofstream copy(std::filesystem::path(out) / "run_config.txt",
                       std::ios::binary);
    copy << in.rdbuf();
  }
}

inline SynonymTable load_synonyms(const std::string &path) {
  if (path.empty())
    return SynonymTable::builtin();
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot read synonym table '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return SynonymTable::parse(text);
}

inline Subset parse_subset(const std::string &name) {
  auto subset = subset_from_name(name);
  if (!subset)
    throw InvalidConfig("unknown subset '" + name + "'");
  return *subset;
}

inline std::uint64_t parameter_checksum(const Parameters &params) {
  return fnv1a64(params.values.data(),
                 sizeof(double) *
                     static_cast<std::size_t>(params.values.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// make-dataset

struct MakeDatasetArgs {
  std::string toy_kind;
  int toy_count = 200;
  std::string from_dir;
  std::uint64_t seed = 0;
  std::string out;
  int descriptions_per_molecule = 1;
  std::string config_file;
};

inline int cmd_make_dataset(const MakeDatasetArgs &args) {
  AnnotatedCorpus corpus;
  if (!args.toy_kind.empty()) {
    auto kind = toy_kind_from_name(args.toy_kind);
    if (!kind)
      throw InvalidConfig("unknown toy dataset kind '" + args.toy_kind + "'");
    corpus = make_toy_dataset(*kind, args.toy_count, args.seed);
  } else if (!args.from_dir.empty()) {
    auto loaded = load_qm9_like(args.from_dir);
    corpus = std::move(loaded.corpus);
    if (loaded.rejected_molecules > 0)
      std::cerr << "warning: rejected " << loaded.rejected_molecules
                << " molecule(s) with unsupported elements\n";
  } else {
    throw InvalidConfig("make-dataset needs either --toy or --from");
  }

  split(corpus, args.seed);

  const RandomSource base(args.seed);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    RandomSource rng = base.fork(100, static_cast<std::uint64_t>(i));
    std::map<PropertyKey, double> props;
    for (int k = 0; k < kPropertyCount; ++k)
      props[static_cast<PropertyKey>(k)] = corpus.properties[i][k];
    for (int d = 0; d < args.descriptions_per_molecule; ++d) {
      corpus.descriptions[i].push_back(generate_description(
          props, corpus.flags[i], TemplateSet::builtin(), rng));
    }
  }

  detail::prepare_output_dir(args.out, args.config_file);
  write_corpus_bundle(corpus, args.out);
  std::cout << "wrote corpus bundle with " << corpus.size()
            << " molecules to " << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string corpus_dir;
  std::string out;
  std::string resume;
  std::string subset = "train";
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int layers = 2;
  int hidden = 32;
  std::string schedule_kind = "polynomial";
  int total_steps = 300;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double exponent = 2.0;
  double clip = 1e-5;
  std::uint64_t seed = 0;
  std::string config_file;
};

inline int cmd_train(const TrainArgs &args) {
  auto loaded = load_qm9_like(args.corpus_dir);
  const Subset subset = detail::parse_subset(args.subset);
  auto dataset = subset_geometries(loaded.corpus, subset);
  if (dataset.empty())
    throw InvalidConfig("subset '" + args.subset +
                        "' is empty; run make-dataset first");

  TrainingCheckpoint ckpt;
  std::uint64_t start_epoch = 0;
  AdamState adam;
  if (!args.resume.empty()) {
    ckpt = load_training_checkpoint(args.resume);
    start_epoch = ckpt.epochs_done;
    if (ckpt.adam)
      adam = *ckpt.adam;
    if (static_cast<std::uint64_t>(args.epochs) <= start_epoch)
      throw InvalidConfig("checkpoint already trained for " +
                          std::to_string(start_epoch) + " epochs");
  } else {
    if (args.schedule_kind == "linear") {
      ckpt.schedule = ScheduleSpec { ScheduleKind::linear, args.total_steps,
                                     args.beta_start, args.beta_end };
    } else if (args.schedule_kind == "polynomial") {
      ckpt.schedule = ScheduleSpec { ScheduleKind::polynomial,
                                     args.total_steps, args.exponent,
                                     args.clip };
    } else {
      throw InvalidConfig("unknown schedule kind '" + args.schedule_kind +
                          "'");
    }
    ckpt.net = NoisePredictorConfig { args.layers, args.hidden, kFeatureWidth,
                                      0 };
    RandomSource init_rng = RandomSource(args.seed).fork(200);
    ckpt.params = init_parameters(noise_predictor_layout(ckpt.net), init_rng);
    ckpt.histogram = corpus_histogram(loaded.corpus, subset);
  }

  const NoiseSchedule sched = build_schedule(ckpt.schedule);
  TrainConfig tc;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.adam.learning_rate = args.learning_rate;
  tc.seed = args.seed;

  TrainResult result = train(ckpt.params, ckpt.net, sched, dataset, tc,
                             start_epoch, adam);
  ckpt.adam = result.adam;
  ckpt.epochs_done = result.epochs_done;

  detail::prepare_output_dir(args.out, args.config_file);
  const auto out = std::filesystem::path(args.out);
  save_training_checkpoint((out / "checkpoint.bin").string(), ckpt);

  std::ofstream csv(out / "loss.csv");
  csv << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < result.epoch_losses.size(); ++i)
    csv << (start_epoch + i) << "," << format_fixed(result.epoch_losses[i], 8)
        << "\n";

  char checksum[32];
  std::snprintf(checksum, sizeof(checksum), "%016llx",
                static_cast<unsigned long long>(
                    detail::parameter_checksum(ckpt.params)));
  std::cout << "trained " << (args.epochs - static_cast<int>(start_epoch))
            << " epoch(s) on " << dataset.size() << " molecules; final loss "
            << format_fixed(result.epoch_losses.back(), 6)
            << "; params checksum " << checksum << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
  std::string checkpoint;
  int count = 10;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  std::string prompt;
  std::string corpus_dir;
  std::string subset = "train";
  double lambda = 0.3;
  int t_stop = -1;  // -1 = T / 10
  std::string synonyms_file;
  std::string config_file;
};

inline int cmd_sample(const SampleArgs &args) {
  TrainingCheckpoint ckpt = load_training_checkpoint(args.checkpoint);
  const NoiseSchedule sched = build_schedule(ckpt.schedule);
  SamplerConfig sampler { &sched, &ckpt.params, &ckpt.net, ckpt.histogram,
                          args.seed, 32 };

  std::vector<MolecularGeometry> geometries;
  nlohmann::ordered_json condition_json;
  nlohmann::ordered_json reference_json;
  bool conditional = false;

  if (!args.prompt.empty()) {
    conditional = true;
    const SynonymTable synonyms = detail::load_synonyms(args.synonyms_file);
    ConditionRecord record = parse_prompt(args.prompt, synonyms);
    if (args.corpus_dir.empty())
      throw InvalidConfig("--prompt requires --corpus for the reference "
                          "index");
    auto loaded = load_qm9_like(args.corpus_dir);
    CorpusIndex index =
        make_corpus_index(loaded.corpus, detail::parse_subset(args.subset));

    const int t_stop =
        args.t_stop >= 0 ? args.t_stop : sched.total_steps() / 10;
    MixSchedule mix = MixSchedule::constant(args.lambda, t_stop,
                                            sched.total_steps());
    ConditionalSamples result = sample_conditional(sampler, record, mix,
                                                   index, args.count,
                                                   args.threads);
    geometries = std::move(result.geometries);
    condition_json = condition_to_json(result.resolved);
    reference_json = nlohmann::ordered_json {
      { "id", result.reference.provenance },
      { "score", result.reference.score },
      { "atom_count", result.reference.geometry.atom_count() },
    };
  } else {
    geometries = sample_unconditional(sampler, args.count, args.threads);
  }

  detail::prepare_output_dir(args.out, args.config_file);
  const auto out = std::filesystem::path(args.out);
  std::ofstream sidecar(out / "samples.jsonl");
  char name[64];
  for (std::size_t i = 0; i < geometries.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%06zu.xyz", i);
    write_xyz(geometries[i], (out / name).string());
    nlohmann::ordered_json line {
      { "schema_version", 1 },
      { "index", i },
      { "file", name },
      { "atom_count", geometries[i].atom_count() },
      { "seed", args.seed },
      { "condition", conditional ? condition_json : nlohmann::ordered_json() },
    };
    if (conditional)
      line["reference"] = reference_json;
    sidecar << line.dump() << "\n";
  }
  std::cout << "wrote " << geometries.size() << " samples to " << args.out
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string samples_dir;
  std::string corpus_dir;
  std::string out;
  std::vector<std::string> regressors;
  std::string novelty_subset = "train";
  bool train_regressor = false;
  std::string property;
  int regressor_epochs = 150;
  int regressor_layers = 1;
  int regressor_hidden = 32;
  double regressor_lr = 5e-3;
  std::uint64_t seed = 0;
  std::string config_file;
};

inline int cmd_evaluate(const EvaluateArgs &args) {
  auto loaded = load_qm9_like(args.corpus_dir);

  if (args.train_regressor) {
    auto key = property_from_name(args.property);
    if (!key)
      throw InvalidConfig("unknown property '" + args.property + "'");
    std::vector<MolecularGeometry> geoms;
    std::vector<double> targets;
    for (std::size_t i = 0; i < loaded.corpus.size(); ++i) {
      if (in_subset(loaded.corpus, i, Subset::d_a)) {
        geoms.push_back(loaded.corpus.geometries[i]);
        targets.push_back(
            property_value(loaded.corpus.properties[i], *key));
      }
    }
    if (geoms.empty())
      throw InvalidConfig("corpus has no D_a half; run make-dataset first");

    RegressorTrainConfig tc;
    tc.net = RegressorConfig { args.regressor_layers, args.regressor_hidden,
                               kFeatureWidth, args.regressor_hidden };
    tc.epochs = args.regressor_epochs;
    tc.adam.learning_rate = args.regressor_lr;
    tc.seed = args.seed;
    TrainedRegressor trained = train_property_regressor(geoms, targets, *key,
                                                        tc);
    detail::prepare_output_dir(args.out, args.config_file);
    const auto path = std::filesystem::path(args.out) / "regressor.bin";
    save_regressor_checkpoint(path.string(), trained.checkpoint);
    std::cout << "trained regressor for " << args.property << " on "
              << geoms.size() << " D_a molecules; validation MAE "
              << format_fixed(trained.validation_mae, 6) << "; wrote "
              << path.string() << "\n";
    return kExitOk;
  }

  // Generated set: every XYZ file in the samples directory.
  std::vector<std::filesystem::path> files;
  for (const auto &entry :
       std::filesystem::directory_iterator(args.samples_dir)) {
    if (entry.path().extension() == ".xyz")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw InvalidInput("no XYZ samples under '" + args.samples_dir + "'");
  std::vector<MolecularGeometry> generated;
  for (const auto &file : files) {
    for (auto &g : read_xyz(file.string()))
      generated.push_back(std::move(g));
  }

  // Condition targets from the sidecar, if present.
  std::map<PropertyKey, double> prompted_targets;
  const auto sidecar_path =
      std::filesystem::path(args.samples_dir) / "samples.jsonl";
  if (std::filesystem::exists(sidecar_path)) {
    std::ifstream sidecar(sidecar_path);
    std::string line;
    while (std::getline(sidecar, line)) {
      if (line.empty())
        continue;
      auto doc = nlohmann::json::parse(line);
      if (!doc.contains("condition") || doc["condition"].is_null())
        continue;
      ConditionRecord record = condition_from_json(doc["condition"]);
      for (const auto &[key, target] : record.targets) {
        if (!target.is_percentile)
          prompted_targets[key] = target.value;
      }
      break;  // one condition record per run
    }
  }

  MetricsReport report;
  report.sample_count = static_cast<int>(generated.size());
  const Subset novelty_subset = detail::parse_subset(args.novelty_subset);
  std::unordered_set<std::string> train_keys;
  for (std::size_t i = 0; i < loaded.corpus.size(); ++i) {
    if (in_subset(loaded.corpus, i, novelty_subset))
      train_keys.insert(canonical_key(loaded.corpus.geometries[i]));
  }
  report.novelty = novelty(generated, train_keys);
  report.atom_stability = atom_stability(generated);
  report.molecule_stability = molecule_stability(generated);

  for (const auto &path : args.regressors) {
    RegressorCheckpoint reg = load_regressor_checkpoint(path);
    auto key = property_from_name(reg.property_key);
    if (!key)
      throw CorruptCheckpoint("regressor '" + path +
                              "' carries an unknown property key");
    auto it = prompted_targets.find(*key);
    if (it == prompted_targets.end())
      throw ConfigMismatch("regressor predicts '" + reg.property_key +
                           "' but the samples carry no such target");
    std::vector<double> target { it->second };
    report.mae[*key] =
        mae(generated, target,
            [&](const MolecularGeometry &g) { return regressor_predict(reg, g); });
  }

  detail::prepare_output_dir(args.out, args.config_file);
  const auto out = std::filesystem::path(args.out);
  std::ofstream json_out(out / "report.json");
  json_out << metrics_to_json(report).dump(2) << "\n";

  std::vector<std::pair<std::string, MetricsReport>> rows {
    { "samples", report } };
  const std::string table = render_metrics_table(rows);
  std::ofstream table_out(out / "report.txt");
  table_out << table;
  std::cout << table;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dispatch

inline int run(int argc, const char *const *argv) {
  CLI::App app { "Text-steerable equivariant diffusion for small-molecule "
                 "geometries" };
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Run configuration file (key=value; one [section] per "
                 "subcommand)");

  MakeDatasetArgs make_args;
  auto *make = app.add_subcommand("make-dataset",
                                  "Build an annotated corpus bundle");
  make->add_option("--toy", make_args.toy_kind,
                   "Toy dataset kind (diatomic_clusters, chain5)");
  make->add_option("--n", make_args.toy_count, "Toy dataset size");
  make->add_option("--from", make_args.from_dir,
                   "Ingest an existing directory of XYZ files + "
                   "properties.csv")
      ->envname("EQDIFF_CORPUS");
  make->add_option("--seed", make_args.seed, "Run seed")->required();
  make->add_option("--out", make_args.out, "Output bundle directory")
      ->required();
  make->add_option("--descriptions", make_args.descriptions_per_molecule,
                   "Descriptions generated per molecule");

  TrainArgs train_args;
  auto *train_cmd = app.add_subcommand("train",
                                       "Train the unconditional predictor");
  train_cmd->add_option("--corpus", train_args.corpus_dir, "Corpus bundle")
      ->envname("EQDIFF_CORPUS")
      ->required();
  train_cmd->add_option("--out", train_args.out, "Run output directory")
      ->required();
  train_cmd->add_option("--resume", train_args.resume,
                        "Checkpoint to resume from");
  train_cmd->add_option("--subset", train_args.subset,
                        "Training subset (train, d_a, d_b, all)");
  train_cmd->add_option("--epochs", train_args.epochs,
                        "Total epochs including any resumed ones");
  train_cmd->add_option("--batch", train_args.batch_size, "Batch size");
  train_cmd->add_option("--lr", train_args.learning_rate, "Adam step size");
  train_cmd->add_option("--layers", train_args.layers, "EGNN layers");
  train_cmd->add_option("--hidden", train_args.hidden, "EGNN hidden width");
  train_cmd->add_option("--schedule", train_args.schedule_kind,
                        "Schedule kind (linear, polynomial)");
  train_cmd->add_option("--steps", train_args.total_steps,
                        "Diffusion steps T");
  train_cmd->add_option("--beta-start", train_args.beta_start,
                        "Linear schedule start");
  train_cmd->add_option("--beta-end", train_args.beta_end,
                        "Linear schedule end");
  train_cmd->add_option("--exponent", train_args.exponent,
                        "Polynomial schedule exponent");
  train_cmd->add_option("--clip", train_args.clip,
                        "Polynomial schedule clip margin");
  train_cmd->add_option("--seed", train_args.seed, "Run seed")->required();

  SampleArgs sample_args;
  auto *sample = app.add_subcommand("sample",
                                    "Generate molecules from a checkpoint");
  sample->add_option("--checkpoint", sample_args.checkpoint,
                     "Training checkpoint")
      ->required();
  sample->add_option("--n", sample_args.count, "Number of molecules");
  sample->add_option("--seed", sample_args.seed, "Run seed")->required();
  sample->add_option("--out", sample_args.out, "Output directory")
      ->required();
  sample->add_option("--threads", sample_args.threads, "Worker threads");
  sample->add_option("--prompt", sample_args.prompt,
                     "Textual condition; routes through the grammar");
  sample->add_option("--corpus", sample_args.corpus_dir,
                     "Corpus bundle (required with --prompt)")
      ->envname("EQDIFF_CORPUS");
  sample->add_option("--subset", sample_args.subset,
                     "Corpus subset for the reference index");
  sample->add_option("--lambda", sample_args.lambda,
                     "Constant mixing weight");
  sample->add_option("--t-stop", sample_args.t_stop,
                     "Step below which mixing stops (default T/10)");
  sample->add_option("--synonyms", sample_args.synonyms_file,
                     "Override the built-in synonym table");

  EvaluateArgs eval_args;
  auto *evaluate = app.add_subcommand("evaluate",
                                      "Compute metrics or train the "
                                      "property regressor");
  evaluate->add_option("--samples", eval_args.samples_dir,
                       "Directory of generated XYZ samples");
  evaluate->add_option("--corpus", eval_args.corpus_dir, "Corpus bundle")
      ->envname("EQDIFF_CORPUS")
      ->required();
  evaluate->add_option("--out", eval_args.out, "Output directory")
      ->required();
  evaluate->add_option("--regressor", eval_args.regressors,
                       "Property regressor checkpoint (repeatable)");
  evaluate->add_option("--novelty-subset", eval_args.novelty_subset,
                       "Corpus subset defining the training keys");
  evaluate->add_flag("--train-regressor", eval_args.train_regressor,
                     "Train the property regressor on D_a instead of "
                     "evaluating");
  evaluate->add_option("--property", eval_args.property,
                       "Property key for --train-regressor");
  evaluate->add_option("--regressor-epochs", eval_args.regressor_epochs,
                       "Regressor training epochs");
  evaluate->add_option("--regressor-layers", eval_args.regressor_layers,
                       "Regressor EGNN layers");
  evaluate->add_option("--regressor-hidden", eval_args.regressor_hidden,
                       "Regressor hidden width");
  evaluate->add_option("--regressor-lr", eval_args.regressor_lr,
                       "Regressor Adam step size");
  evaluate->add_option("--seed", eval_args.seed,
                       "Seed for --train-regressor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  const auto *config_opt = app.get_config_ptr();
  const std::string config_file =
      config_opt != nullptr && config_opt->count() > 0
          ? config_opt->as<std::string>()
          : std::string();
  try {
    if (make->parsed()) {
      make_args.config_file = config_file;
      return cmd_make_dataset(make_args);
    }
    if (train_cmd->parsed()) {
      train_args.config_file = config_file;
      return cmd_train(train_args);
    }
    if (sample->parsed()) {
      sample_args.config_file = config_file;
      return cmd_sample(sample_args);
    }
    if (evaluate->parsed()) {
      eval_args.config_file = config_file;
      return cmd_evaluate(eval_args);
    }
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace eqdiff::cli

#endif  // EQDIFF_CLI_HPP_
