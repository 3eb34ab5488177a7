//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_CONDITION_HPP_
#define EQDIFF_CONDITION_HPP_

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqdiff/assets.hpp"
#include "eqdiff/core.hpp"
#include "eqdiff/diffuse.hpp"
#include "eqdiff/geom.hpp"
#include "eqdiff/properties.hpp"
#include "eqdiff/schedule.hpp"

namespace eqdiff {

// A property target is either an absolute value in the property's unit or a
// corpus percentile still to be resolved against the indexed training set.
struct PropertyTarget {
  double value = 0.0;
  bool is_percentile = false;

  bool operator==(const PropertyTarget &) const = default;
};

struct ConditionRecord {
  std::map<PropertyKey, PropertyTarget> targets;
  FlagSet flags;
  std::string raw_prompt;
  std::vector<std::string> ignored_spans;

  bool empty() const { return targets.empty() && flags.empty(); }
};

// ---------------------------------------------------------------------------
// Synonym table: qualitative phrase -> structural flag or percentile target.

class SynonymTable {
public:
  struct Entry {
    std::string phrase;  // lowercase
    bool is_flag = false;
    StructuralFlag flag = StructuralFlag::chain;
    PropertyKey key = PropertyKey::gap;
    double percentile = 0.0;
  };

  static SynonymTable parse(std::string_view text) {
    SynonymTable table;
    std::size_t line_no = 0;
    for (std::size_t pos = 0; pos < text.size();) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos)
        eol = text.size();
      std::string line(text.substr(pos, eol - pos));
      pos = eol + 1;
      ++line_no;

      if (line.empty() || line[0] == '#')
        continue;
      const auto sep = line.find(" => ");
      if (sep == std::string::npos)
        throw ParseError("synonyms line " + std::to_string(line_no) +
                         ": missing ' => '");
      Entry entry;
      entry.phrase = to_lower(line.substr(0, sep));
      std::string action = line.substr(sep + 4);
      if (action.rfind("flag:", 0) == 0) {
        auto flag = flag_from_name(action.substr(5));
        if (!flag)
          throw ParseError("synonyms line " + std::to_string(line_no) +
                           ": unknown flag '" + action.substr(5) + "'");
        entry.is_flag = true;
        entry.flag = *flag;
      } else if (action.rfind("percentile:", 0) == 0) {
        std::string rest = action.substr(11);
        const auto colon = rest.find(':');
        if (colon == std::string::npos)
          throw ParseError("synonyms line " + std::to_string(line_no) +
                           ": percentile needs '<key>:<p>'");
        auto key = property_from_name(rest.substr(0, colon));
        if (!key)
          throw ParseError("synonyms line " + std::to_string(line_no) +
                           ": unknown property '" + rest.substr(0, colon) + "'");
        entry.key = *key;
        entry.percentile = std::stod(rest.substr(colon + 1));
        if (entry.percentile <= 0.0 || entry.percentile >= 1.0)
          throw ParseError("synonyms line " + std::to_string(line_no) +
                           ": percentile outside (0,1)");
      } else {
        throw ParseError("synonyms line " + std::to_string(line_no) +
                         ": unknown action '" + action + "'");
      }
      table.entries_.push_back(std::move(entry));
    }
    // Longest phrase first so e.g. "polycyclic" wins over "cyclic".
    std::stable_sort(table.entries_.begin(), table.entries_.end(),
                     [](const Entry &a, const Entry &b) {
                       return a.phrase.size() > b.phrase.size();
                     });
    return table;
  }

  static const SynonymTable &builtin() {
    static const SynonymTable table = parse(assets::kSynonyms);
    return table;
  }

  const std::vector<Entry> &entries() const { return entries_; }

  static std::string to_lower(std::string s) {
    for (char &c : s)
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Prompt grammar.

namespace detail {

inline const std::vector<std::pair<PropertyKey, std::regex>> &
property_patterns() {
  static const std::vector<std::pair<PropertyKey, std::regex>> patterns = [] {
    const std::string num = R"(([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?))";
    const std::string of = R"((?:of|is)\s+)";
    auto make = [&](const std::string &name, const std::string &unit) {
      return std::regex(name + R"(\s+)" + of + num + R"(\s*)" + unit,
                        std::regex_constants::ECMAScript |
                            std::regex_constants::icase);
    };
    std::vector<std::pair<PropertyKey, std::regex>> out;
    out.emplace_back(PropertyKey::Cv,
                     make(R"(heat\s+capacity)",
                          R"(cal\s*/\s*\(?\s*mol\s*(?:·|\.|/|\s)?\s*K\)?)"));
    out.emplace_back(PropertyKey::mu,
                     make(R"(dipole\s+moment)", R"((?:Debye|D)\b)"));
    out.emplace_back(PropertyKey::alpha,
                     make(R"(polarizability)", R"(Bohr\s*(?:\^?\s*3|³))"));
    out.emplace_back(
        PropertyKey::eps_homo,
        make(R"((?:HOMO|highest\s+occupied\s+molecular\s+orbital)\s+energy)",
             R"(meV\b)"));
    out.emplace_back(
        PropertyKey::eps_lumo,
        make(R"((?:LUMO|lowest\s+unoccupied\s+molecular\s+orbital)\s+energy)",
             R"(meV\b)"));
    out.emplace_back(
        PropertyKey::gap,
        make(R"((?:HOMO\s*-?\s*LUMO\s+gap|energy\s+gap|gap))", R"(meV\b)"));
    return out;
  }();
  return patterns;
}

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

}  // namespace detail

// Deterministic grammar extraction: number+unit phrases bind to property
// keys, qualitative phrases bind through the synonym table, and anything
// unrecognized is returned verbatim in ignored_spans.
inline ConditionRecord parse_prompt(const std::string &text,
                                    const SynonymTable &synonyms =
                                        SynonymTable::builtin()) {
  if (text.empty())
    throw UnparseablePrompt("empty prompt");

  ConditionRecord record;
  record.raw_prompt = text;
  std::vector<bool> consumed(text.size(), false);

  auto span_free = [&](std::size_t begin, std::size_t len) {
    for (std::size_t i = begin; i < begin + len; ++i) {
      if (consumed[i])
        return false;
    }
    return true;
  };
  auto mark = [&](std::size_t begin, std::size_t len) {
    for (std::size_t i = begin; i < begin + len; ++i)
      consumed[i] = true;
  };

  for (const auto &[key, pattern] : detail::property_patterns()) {
    for (std::sregex_iterator it(text.begin(), text.end(), pattern), end;
         it != end; ++it) {
      const auto begin = static_cast<std::size_t>(it->position(0));
      const auto len = static_cast<std::size_t>(it->length(0));
      if (!span_free(begin, len))
        continue;
      mark(begin, len);
      if (!record.targets.contains(key))
        record.targets[key] = PropertyTarget { std::stod(it->str(1)), false };
    }
  }

  const std::string lower = SynonymTable::to_lower(text);
  for (const auto &entry : synonyms.entries()) {
    std::size_t pos = 0;
    while ((pos = lower.find(entry.phrase, pos)) != std::string::npos) {
      const std::size_t end = pos + entry.phrase.size();
      const bool bounded =
          (pos == 0 || !detail::is_word_char(lower[pos - 1])) &&
          (end == lower.size() || !detail::is_word_char(lower[end]));
      if (bounded && span_free(pos, entry.phrase.size())) {
        mark(pos, entry.phrase.size());
        if (entry.is_flag) {
          record.flags.add(entry.flag);
        } else if (!record.targets.contains(entry.key)) {
          record.targets[entry.key] =
              PropertyTarget { entry.percentile, true };
        }
        pos = end;
      } else {
        ++pos;
      }
    }
  }

  std::size_t i = 0;
  while (i < text.size()) {
    if (consumed[i]) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    while (i < text.size() && !consumed[i])
      ++i;
    std::string span = text.substr(begin, i - begin);
    // Trim whitespace but keep the span verbatim otherwise.
    const auto first = span.find_first_not_of(" \t\r\n");
    const auto last = span.find_last_not_of(" \t\r\n");
    if (first == std::string::npos)
      continue;
    span = span.substr(first, last - first + 1);
    if (std::any_of(span.begin(), span.end(), detail::is_word_char))
      record.ignored_spans.push_back(std::move(span));
  }

  if (record.empty())
    throw UnparseablePrompt("no recognizable clause in prompt: \"" + text +
                            "\"");
  return record;
}

// ---------------------------------------------------------------------------
// Corpus index and reference-geometry retrieval (the conversion module).

struct CorpusIndexEntry {
  MolecularGeometry geometry;  // centered
  PropertyVector properties {};
  FlagSet flags;
  std::string id;
};

// Read-only retrieval structure over the training set: per-property sorted
// values for percentile resolution plus interquartile ranges for the
// normalized match distance.
class CorpusIndex {
public:
  explicit CorpusIndex(std::vector<CorpusIndexEntry> entries)
      : entries_(std::move(entries)) {
    if (entries_.empty())
      throw StateError("corpus index is empty");
    for (int p = 0; p < kPropertyCount; ++p) {
      sorted_[p].reserve(entries_.size());
      for (const auto &e : entries_)
        sorted_[p].push_back(e.properties[p]);
      std::sort(sorted_[p].begin(), sorted_[p].end());
      iqr_[p] = std::max(quantile(p, 0.75) - quantile(p, 0.25), 1e-9);
    }
  }

  const std::vector<CorpusIndexEntry> &entries() const { return entries_; }

  double quantile(int property, double p) const {
    const auto &values = sorted_[property];
    if (values.size() == 1)
      return values[0];
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  }

  double iqr(PropertyKey key) const { return iqr_[static_cast<int>(key)]; }

private:
  std::vector<CorpusIndexEntry> entries_;
  std::array<std::vector<double>, kPropertyCount> sorted_;
  std::array<double, kPropertyCount> iqr_ {};
};

// Percentile targets become absolute values at the corpus quantile.
inline ConditionRecord resolve_targets(const ConditionRecord &record,
                                       const CorpusIndex &index) {
  ConditionRecord resolved = record;
  for (auto &[key, target] : resolved.targets) {
    if (target.is_percentile) {
      target.value = index.quantile(static_cast<int>(key), target.value);
      target.is_percentile = false;
    }
  }
  return resolved;
}

struct ReferenceGeometry {
  MolecularGeometry geometry;
  std::string provenance;
  int corpus_index = -1;
  double score = 0.0;
};

// Retrieves the corpus molecule with minimal weighted normalized distance:
// |v - target| / IQR per property target plus 1.0 per requested flag the
// molecule lacks. Ties break toward the smallest corpus index.
inline ReferenceGeometry build_reference(const ConditionRecord &record,
                                         const CorpusIndex &index) {
  if (record.empty())
    throw InvalidInput("condition record has no targets or flags");
  const ConditionRecord resolved = resolve_targets(record, index);

  int best = -1;
  double best_score = 0.0;
  const auto &entries = index.entries();
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    double score = 0.0;
    for (const auto &[key, target] : resolved.targets) {
      score += std::abs(property_value(entries[i].properties, key) -
                        target.value) /
               index.iqr(key);
    }
    for (auto flag : resolved.flags.to_vector()) {
      if (!entries[i].flags.has(flag))
        score += 1.0;
    }
    if (best < 0 || score < best_score) {
      best = i;
      best_score = score;
    }
  }

  const auto &entry = entries[static_cast<std::size_t>(best)];
  return ReferenceGeometry { center_of_mass_project(entry.geometry),
                             entry.id, best, best_score };
}

// ---------------------------------------------------------------------------
// Latent mixing.

// Per-step mixing weights. lambda(t) = 0 for t <= t_stop, and the sequence
// never increases as t decreases, so late steps run unguided.
class MixSchedule {
public:
  MixSchedule(Vec lambdas, int t_stop): lambdas_(std::move(lambdas)),
                                        t_stop_(t_stop) {
    const int total = static_cast<int>(lambdas_.size());
    if (total < 1)
      throw InvalidConfig("mix schedule must cover at least one step");
    if (t_stop_ < 0 || t_stop_ > total)
      throw InvalidConfig("t_stop outside [0, T]");
    for (int t = 1; t <= total; ++t) {
      const double lam = lambdas_[t - 1];
      if (lam < 0.0 || lam > 1.0)
        throw InvalidConfig("lambda outside [0,1] at step " +
                            std::to_string(t));
      if (t <= t_stop_ && lam != 0.0)
        throw InvalidConfig("lambda must be 0 at and below t_stop");
      if (t >= 2 && lambdas_[t - 1] < lambdas_[t - 2])
        throw InvalidConfig("lambda must be non-increasing as t decreases");
    }
  }

  static MixSchedule constant(double lambda, int t_stop, int total_steps) {
    Vec lambdas = Vec::Constant(total_steps, lambda);
    for (int t = 1; t <= std::min(t_stop, total_steps); ++t)
      lambdas[t - 1] = 0.0;
    return MixSchedule(std::move(lambdas), t_stop);
  }

  double lambda(int t) const {
    if (t < 1 || t > static_cast<int>(lambdas_.size()))
      throw InvalidInput("mix step outside 1..T");
    return lambdas_[t - 1];
  }

  int t_stop() const { return t_stop_; }
  int total_steps() const { return static_cast<int>(lambdas_.size()); }

private:
  Vec lambdas_;
  int t_stop_ = 0;
};

// One refinement step: the reference (already resized and aligned to the
// proposal) is noised to level t-1, then blended into the proposal with
// weight lambda_t on both coordinates and features. lambda_t = 0 returns the
// proposal untouched without consuming randomness.
inline MolecularGeometry mix_step_with_noise(const MolecularGeometry &proposal,
                                             const ReferenceGeometry &reference,
                                             const NoiseSchedule &sched,
                                             const MixSchedule &mix, int t,
                                             const MolecularGeometry *noise) {
  const double lambda = mix.lambda(t);
  if (lambda == 0.0)
    return proposal;
  if (reference.geometry.atom_count() != proposal.atom_count())
    throw InternalError("reference size does not match proposal");

  MolecularGeometry noised = reference.geometry;
  if (t - 1 >= 1) {
    if (noise == nullptr)
      throw InternalError("mix_step at t >= 2 needs noise");
    noised = marginal_sample(sched, reference.geometry, t - 1, *noise);
  }
  return MolecularGeometry {
    lambda * noised.coords + (1.0 - lambda) * proposal.coords,
    lambda * noised.feats + (1.0 - lambda) * proposal.feats,
    noised.centered && proposal.centered,
  };
}

inline MolecularGeometry mix_step(const MolecularGeometry &proposal,
                                  const ReferenceGeometry &reference,
                                  const NoiseSchedule &sched,
                                  const MixSchedule &mix, int t,
                                  RandomSource &rng) {
  if (mix.lambda(t) == 0.0 || t - 1 < 1)
    return mix_step_with_noise(proposal, reference, sched, mix, t, nullptr);
  MolecularGeometry noise = draw_noise(rng, proposal.atom_count());
  return mix_step_with_noise(proposal, reference, sched, mix, t, &noise);
}

// ---------------------------------------------------------------------------
// Conditional sampling: reverse chain with per-step refinement.

struct ConditionalSamples {
  std::vector<MolecularGeometry> geometries;
  ConditionRecord resolved;
  ReferenceGeometry reference;
};

// The atom count is fixed by the reference. Streams are forked per molecule
// index; the mixing stream is separate from the chain stream, so a lambda
// schedule that is identically zero reproduces unconditional sampling
// bitwise for equal atom counts.
inline ConditionalSamples sample_conditional(const SamplerConfig &cfg,
                                             const ConditionRecord &record,
                                             const MixSchedule &mix,
                                             const CorpusIndex &index, int n,
                                             int threads = 1) {
  if (cfg.schedule == nullptr || cfg.params == nullptr || cfg.net == nullptr)
    throw StateError("sampler has no trained predictor loaded");
  if (mix.total_steps() != cfg.schedule->total_steps())
    throw InvalidConfig("mix schedule length must equal schedule steps");

  ConditionalSamples result;
  result.resolved = resolve_targets(record, index);
  result.reference = build_reference(result.resolved, index);
  const int atoms = result.reference.geometry.atom_count();

  const RandomSource base(cfg.seed);
  result.geometries.resize(static_cast<std::size_t>(n));
  detail::parallel_for_indices(n, threads, [&](int i) {
    RandomSource chain_rng =
        base.fork(stream::chain, static_cast<std::uint64_t>(i));
    RandomSource mix_rng =
        base.fork(stream::mix, static_cast<std::uint64_t>(i));
    NetPredictor predictor { cfg.params, cfg.net, cfg.schedule->total_steps(),
                             Vec(), cfg.schedule };

    MolecularGeometry g = draw_noise(chain_rng, atoms);
    for (int t = cfg.schedule->total_steps(); t >= 1; --t) {
      MolecularGeometry proposal;
      if (t >= 2) {
        MolecularGeometry noise = draw_noise(chain_rng, atoms);
        proposal = reverse_step_with(predictor, *cfg.schedule, g, t, &noise);
      } else {
        proposal = reverse_step_with(predictor, *cfg.schedule, g, t, nullptr);
      }
      if (mix.lambda(t) > 0.0) {
        ReferenceGeometry aligned = result.reference;
        const Rotation rot =
            kabsch_align(result.reference.geometry, proposal);
        aligned.geometry = apply_rotation(result.reference.geometry, rot);
        g = mix_step(proposal, aligned, *cfg.schedule, mix, t, mix_rng);
      } else {
        g = std::move(proposal);
      }
    }
    result.geometries[static_cast<std::size_t>(i)] = decode_features(g);
  });
  return result;
}

// ---------------------------------------------------------------------------
// JSON serialization of condition records (sample sidecars).

inline nlohmann::ordered_json condition_to_json(const ConditionRecord &record) {
  nlohmann::ordered_json targets = nlohmann::ordered_json::object();
  for (const auto &[key, target] : record.targets) {
    targets[property_name(key)] = {
      { "value", target.value },
      { "is_percentile", target.is_percentile },
    };
  }
  nlohmann::ordered_json flags = nlohmann::ordered_json::array();
  for (auto flag : record.flags.to_vector())
    flags.push_back(flag_name(flag));
  return nlohmann::ordered_json {
    { "targets", std::move(targets) },
    { "flags", std::move(flags) },
    { "raw_prompt", record.raw_prompt },
    { "ignored_spans", record.ignored_spans },
  };
}

inline ConditionRecord condition_from_json(const nlohmann::json &j) {
  ConditionRecord record;
  for (const auto &[name, target] : j.at("targets").items()) {
    auto key = property_from_name(name);
    if (!key)
      throw ParseError("unknown property '" + name + "' in condition record");
    record.targets[*key] = PropertyTarget {
      target.at("value").get<double>(),
      target.at("is_percentile").get<bool>(),
    };
  }
  for (const auto &name : j.at("flags")) {
    auto flag = flag_from_name(name.get<std::string>());
    if (!flag)
      throw ParseError("unknown flag in condition record");
    record.flags.add(*flag);
  }
  record.raw_prompt = j.value("raw_prompt", "");
  if (j.contains("ignored_spans"))
    record.ignored_spans =
        j.at("ignored_spans").get<std::vector<std::string>>();
  return record;
}

}  // namespace eqdiff

#endif  // EQDIFF_CONDITION_HPP_
