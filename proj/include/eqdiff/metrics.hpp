//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_METRICS_HPP_
#define EQDIFF_METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqdiff/assets.hpp"
#include "eqdiff/checkpoint.hpp"
#include "eqdiff/core.hpp"
#include "eqdiff/geom.hpp"
#include "eqdiff/net.hpp"
#include "eqdiff/properties.hpp"

namespace eqdiff {

// ---------------------------------------------------------------------------
// Bond perception.

// Distance thresholds from covalent radius sums: single bonds up to
// radius sum + single_margin, double and triple bonds below the tighter
// offsets. Allowed valencies per element decide atom stability.
class BondTable {
public:
  static BondTable parse(std::string_view text) {
    BondTable table;
    std::array<bool, kElementCount> has_radius {}, has_valency {};
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

      std::istringstream in(line);
      std::string kind;
      in >> kind;
      if (kind == "radius" || kind == "valency") {
        std::string symbol;
        double value;
        if (!(in >> symbol >> value))
          throw ParseError("bond table line " + std::to_string(line_no));
        auto e = element_from_symbol(symbol);
        if (!e)
          throw ParseError("bond table line " + std::to_string(line_no) +
                           ": unknown element '" + symbol + "'");
        if (kind == "radius") {
          table.radius_[static_cast<int>(*e)] = value;
          has_radius[static_cast<int>(*e)] = true;
        } else {
          table.valency_[static_cast<int>(*e)].push_back(
              static_cast<int>(value));
          has_valency[static_cast<int>(*e)] = true;
        }
      } else if (kind == "single_margin" || kind == "double_offset" ||
                 kind == "triple_offset") {
        double value;
        if (!(in >> value))
          throw ParseError("bond table line " + std::to_string(line_no));
        if (kind == "single_margin")
          table.single_margin_ = value;
        else if (kind == "double_offset")
          table.double_offset_ = value;
        else
          table.triple_offset_ = value;
      } else {
        throw ParseError("bond table line " + std::to_string(line_no) +
                         ": unknown entry '" + kind + "'");
      }
    }
    for (int i = 0; i < kElementCount; ++i) {
      if (!has_radius[i] || !has_valency[i])
        throw InvalidConfig("bond table is missing radius or valency entries");
    }
    if (!(table.single_margin_ > table.double_offset_ &&
          table.double_offset_ > table.triple_offset_))
      throw InvalidConfig("bond thresholds must order single > double > triple");
    return table;
  }

  static const BondTable &builtin() {
    static const BondTable table = parse(assets::kBondTable);
    return table;
  }

  double single_max(Element a, Element b) const {
    return radius_sum(a, b) + single_margin_;
  }

  int bond_order(Element a, Element b, double distance) const {
    const double sum = radius_sum(a, b);
    if (distance <= sum + triple_offset_)
      return 3;
    if (distance <= sum + double_offset_)
      return 2;
    if (distance <= sum + single_margin_)
      return 1;
    return 0;
  }

  bool valency_allowed(Element e, int valence) const {
    const auto &allowed = valency_[static_cast<int>(e)];
    return std::find(allowed.begin(), allowed.end(), valence) != allowed.end();
  }

private:
  double radius_sum(Element a, Element b) const {
    return radius_[static_cast<int>(a)] + radius_[static_cast<int>(b)];
  }

  std::array<double, kElementCount> radius_ {};
  std::array<std::vector<int>, kElementCount> valency_;
  double single_margin_ = 0.0;
  double double_offset_ = 0.0;
  double triple_offset_ = 0.0;
};

struct Bond {
  int i = 0;
  int j = 0;
  int order = 0;
};

struct BondGraph {
  int atoms = 0;
  std::vector<Bond> bonds;          // i < j, order >= 1
  std::vector<int> total_order;     // per-atom sum of bond orders
};

inline BondGraph perceive_bond_graph(const MolecularGeometry &g,
                                     const BondTable &table =
                                         BondTable::builtin()) {
  if (!is_decoded(g))
    throw InvalidInput("bond perception requires a decoded geometry");
  BondGraph graph;
  graph.atoms = g.atom_count();
  graph.total_order.assign(static_cast<std::size_t>(g.atom_count()), 0);
  for (int i = 0; i < g.atom_count(); ++i) {
    for (int j = i + 1; j < g.atom_count(); ++j) {
      const double d = (g.coords.row(i) - g.coords.row(j)).norm();
      const int order =
          table.bond_order(element_of_atom(g, i), element_of_atom(g, j), d);
      if (order > 0) {
        graph.bonds.push_back(Bond { i, j, order });
        graph.total_order[static_cast<std::size_t>(i)] += order;
        graph.total_order[static_cast<std::size_t>(j)] += order;
      }
    }
  }
  return graph;
}

// Total perceived bond order per atom.
inline std::vector<int> perceive_bonds(const MolecularGeometry &g,
                                       const BondTable &table =
                                           BondTable::builtin()) {
  return perceive_bond_graph(g, table).total_order;
}

inline bool is_stable_atom(Element e, int valence, const BondTable &table) {
  return table.valency_allowed(e, valence);
}

// ---------------------------------------------------------------------------
// Stability and novelty metrics.

inline double atom_stability(std::span<const MolecularGeometry> gs,
                             const BondTable &table = BondTable::builtin()) {
  if (gs.empty())
    throw InvalidInput("atom_stability requires a non-empty list");
  long stable = 0, total = 0;
  for (const auto &g : gs) {
    const auto valences = perceive_bonds(g, table);
    for (int i = 0; i < g.atom_count(); ++i) {
      if (is_stable_atom(element_of_atom(g, i), valences[i], table))
        ++stable;
      ++total;
    }
  }
  return static_cast<double>(stable) / static_cast<double>(total);
}

inline double molecule_stability(std::span<const MolecularGeometry> gs,
                                 const BondTable &table =
                                     BondTable::builtin()) {
  if (gs.empty())
    throw InvalidInput("molecule_stability requires a non-empty list");
  long stable = 0;
  for (const auto &g : gs) {
    const auto valences = perceive_bonds(g, table);
    bool all = true;
    for (int i = 0; i < g.atom_count(); ++i)
      all = all && is_stable_atom(element_of_atom(g, i), valences[i], table);
    stable += all ? 1 : 0;
  }
  return static_cast<double>(stable) / static_cast<double>(gs.size());
}

// Canonical identity key: element formula plus a Weisfeiler-Lehman style
// hash of the perceived bond multigraph. Identical molecules always collide;
// distinct molecules may (rarely) collide, which can only lower novelty.
inline std::string canonical_key(const MolecularGeometry &g,
                                 const BondTable &table =
                                     BondTable::builtin()) {
  const BondGraph graph = perceive_bond_graph(g, table);
  const int n = g.atom_count();

  std::vector<std::vector<std::pair<int, int>>> adjacency(
      static_cast<std::size_t>(n));
  for (const auto &bond : graph.bonds) {
    adjacency[static_cast<std::size_t>(bond.i)].emplace_back(bond.j,
                                                             bond.order);
    adjacency[static_cast<std::size_t>(bond.j)].emplace_back(bond.i,
                                                             bond.order);
  }

  std::vector<std::uint64_t> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = hash_combine(
        static_cast<std::uint64_t>(element_of_atom(g, i)) + 1,
        static_cast<std::uint64_t>(charge_of_atom(g, i) + 16));
  }
  for (int round = 0; round < 3; ++round) {
    std::vector<std::uint64_t> next(labels);
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<int, std::uint64_t>> neighborhood;
      for (const auto &[j, order] : adjacency[static_cast<std::size_t>(i)])
        neighborhood.emplace_back(order, labels[static_cast<std::size_t>(j)]);
      std::sort(neighborhood.begin(), neighborhood.end());
      std::uint64_t h = labels[static_cast<std::size_t>(i)];
      for (const auto &[order, label] : neighborhood)
        h = hash_combine(hash_combine(h, static_cast<std::uint64_t>(order)),
                         label);
      next[static_cast<std::size_t>(i)] = h;
    }
    labels = std::move(next);
  }
  std::sort(labels.begin(), labels.end());
  std::uint64_t digest = 0x9e3779b97f4a7c15ULL;
  for (auto label : labels)
    digest = hash_combine(digest, label);

  std::array<int, kElementCount> counts {};
  for (int i = 0; i < n; ++i)
    ++counts[static_cast<int>(element_of_atom(g, i))];
  std::ostringstream key;
  for (int e = 0; e < kElementCount; ++e) {
    if (counts[e] > 0)
      key << kElementSymbols[e] << counts[e];
  }
  key << "#" << std::hex << digest;
  return key.str();
}

// Fraction of generated molecules whose canonical key does not appear in the
// training-set keys.
inline double novelty(std::span<const MolecularGeometry> gs,
                      const std::unordered_set<std::string> &train_keys,
                      const BondTable &table = BondTable::builtin()) {
  if (gs.empty())
    throw InvalidInput("novelty requires a non-empty list");
  long novel = 0;
  for (const auto &g : gs) {
    if (!train_keys.contains(canonical_key(g, table)))
      ++novel;
  }
  return static_cast<double>(novel) / static_cast<double>(gs.size());
}

// ---------------------------------------------------------------------------
// Conditioning fidelity: held-out property regressor and MAE.

inline double mae(std::span<const MolecularGeometry> gs,
                  std::span<const double> targets,
                  const std::function<double(const MolecularGeometry &)>
                      &predictor) {
  if (gs.empty())
    throw InvalidInput("mae requires a non-empty list");
  if (targets.size() != gs.size() && targets.size() != 1)
    throw InvalidInput("targets must match the molecule count or be a single "
                       "broadcast value");
  double total = 0.0;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const double target = targets.size() == 1 ? targets[0] : targets[i];
    total += std::abs(predictor(gs[i]) - target);
  }
  return total / static_cast<double>(gs.size());
}

inline double regressor_predict(const RegressorCheckpoint &ckpt,
                                const MolecularGeometry &g) {
  return regressor_forward(ckpt.params, ckpt.cfg, g) * ckpt.target_std +
         ckpt.target_mean;
}

struct RegressorTrainConfig {
  RegressorConfig net;
  int epochs = 150;
  int batch_size = 16;
  AdamConfig adam { 5e-3, 0.9, 0.999, 1e-8 };
  std::uint64_t seed = 0;
};

struct TrainedRegressor {
  RegressorCheckpoint checkpoint;
  double validation_mae = 0.0;
};

// Trains phi_p on the given molecules (the D_a half at the call site) with a
// held-out slice for validation. Targets are standardized internally; the
// stored checkpoint predicts in original units.
inline TrainedRegressor train_property_regressor(
    std::span<const MolecularGeometry> geometries,
    std::span<const double> targets, PropertyKey key,
    const RegressorTrainConfig &tc) {
  if (geometries.empty() || geometries.size() != targets.size())
    throw InvalidInput("regressor training needs matching geometries and "
                       "targets");

  const auto n = geometries.size();
  RandomSource base(tc.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t { 0 });
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = base.uniform_index(i + 1);
    std::swap(order[i], order[j]);
  }
  const std::size_t val_count = n >= 10 ? n / 10 : (n >= 2 ? 1 : 0);
  const std::size_t train_count = n - val_count;

  double mean = 0.0;
  for (std::size_t i = 0; i < train_count; ++i)
    mean += targets[order[i]];
  mean /= static_cast<double>(train_count);
  double var = 0.0;
  for (std::size_t i = 0; i < train_count; ++i)
    var += (targets[order[i]] - mean) * (targets[order[i]] - mean);
  const double stddev =
      std::max(std::sqrt(var / static_cast<double>(train_count)), 1e-9);

  RandomSource init_rng = base.fork(1);
  Parameters params = init_parameters(regressor_layout(tc.net), init_rng);
  AdamState state = AdamState::zeros(params.values.size());

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    RandomSource shuffle_rng = base.fork(2, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> epoch_order(order.begin(),
                                         order.begin() + train_count);
    for (std::size_t i = train_count - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.uniform_index(i + 1);
      std::swap(epoch_order[i], epoch_order[j]);
    }
    for (std::size_t begin = 0; begin < train_count;
         begin += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(tc.batch_size),
                   train_count);
      std::vector<RegressorItem> batch;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(RegressorItem {
            &geometries[epoch_order[i]],
            (targets[epoch_order[i]] - mean) / stddev });
      }
      LossResult lr = regressor_loss_and_gradient(params, tc.net, batch);
      if (!std::isfinite(lr.loss))
        throw TrainingDiverged("regressor loss diverged");
      adam_step(params, lr.gradient, state, tc.adam);
    }
  }

  TrainedRegressor result;
  result.checkpoint = RegressorCheckpoint { tc.net, std::move(params),
                                            property_name(key), mean, stddev };
  if (val_count > 0) {
    double err = 0.0;
    for (std::size_t i = train_count; i < n; ++i) {
      err += std::abs(regressor_predict(result.checkpoint,
                                        geometries[order[i]]) -
                      targets[order[i]]);
    }
    result.validation_mae = err / static_cast<double>(val_count);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report assembly and serialization.

struct MetricsReport {
  int sample_count = 0;
  double novelty = 0.0;
  double atom_stability = 0.0;
  double molecule_stability = 0.0;
  std::map<PropertyKey, double> mae;
};

inline nlohmann::ordered_json metrics_to_json(const MetricsReport &report) {
  nlohmann::ordered_json mae = nlohmann::ordered_json::object();
  for (const auto &[key, value] : report.mae)
    mae[property_name(key)] = value;
  return nlohmann::ordered_json {
    { "version", 1 },
    { "sample_count", report.sample_count },
    { "novelty", report.novelty },
    { "atom_stability", report.atom_stability },
    { "molecule_stability", report.molecule_stability },
    { "mae", std::move(mae) },
  };
}

// Plain-text table in the paper's layout: method rows, metric columns
// ordered Novel, A. Stable, M. Stable (percent), with an MAE block when any
// row carries property errors.
inline std::string
render_metrics_table(std::span<const std::pair<std::string, MetricsReport>>
                         rows) {
  std::ostringstream out;
  char buf[64];

  std::size_t label_width = std::string("Method").size();
  for (const auto &[label, report] : rows)
    label_width = std::max(label_width, label.size());

  auto pad = [&](const std::string &s, std::size_t width) {
    std::string padded = s;
    padded.resize(std::max(width, s.size()), ' ');
    return padded;
  };

  out << pad("Method", label_width) << "  " << "Novel (%)" << "  "
      << "A. Stable (%)" << "  " << "M. Stable (%)" << "\n";
  for (const auto &[label, report] : rows) {
    out << pad(label, label_width);
    std::snprintf(buf, sizeof(buf), "  %9.2f  %13.2f  %13.2f",
                  100.0 * report.novelty, 100.0 * report.atom_stability,
                  100.0 * report.molecule_stability);
    out << buf << "\n";
  }

  bool any_mae = false;
  for (const auto &[label, report] : rows)
    any_mae = any_mae || !report.mae.empty();
  if (any_mae) {
    out << "\n" << pad("Method", label_width);
    std::vector<PropertyKey> keys;
    for (const auto &[label, report] : rows) {
      for (const auto &[key, value] : report.mae) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
          keys.push_back(key);
      }
    }
    std::sort(keys.begin(), keys.end());
    for (auto key : keys) {
      std::snprintf(buf, sizeof(buf), "  MAE %s (%s)", property_name(key),
                    property_unit(key));
      out << buf;
    }
    out << "\n";
    for (const auto &[label, report] : rows) {
      out << pad(label, label_width);
      for (auto key : keys) {
        const std::string header =
            "MAE " + std::string(property_name(key)) + " (" +
            property_unit(key) + ")";
        if (auto it = report.mae.find(key); it != report.mae.end())
          std::snprintf(buf, sizeof(buf), "  %*.4f",
                        static_cast<int>(header.size()), it->second);
        else
          std::snprintf(buf, sizeof(buf), "  %*s",
                        static_cast<int>(header.size()), "-");
        out << buf;
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace eqdiff

#endif  // EQDIFF_METRICS_HPP_
