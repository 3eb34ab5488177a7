//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_DATA_HPP_
#define EQDIFF_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqdiff/assets.hpp"
#include "eqdiff/condition.hpp"
#include "eqdiff/core.hpp"
#include "eqdiff/diffuse.hpp"
#include "eqdiff/geom.hpp"
#include "eqdiff/metrics.hpp"
#include "eqdiff/properties.hpp"

namespace eqdiff {

enum class SplitLabel : int { none = 0, train = 1, val = 2, test = 3 };
enum class HalfLabel : int { none = 0, a = 1, b = 2 };

inline const char *split_label_name(SplitLabel label) {
  switch (label) {
  case SplitLabel::none: return "none";
  case SplitLabel::train: return "train";
  case SplitLabel::val: return "val";
  case SplitLabel::test: return "test";
  }
  return "none";
}

inline const char *half_label_name(HalfLabel label) {
  switch (label) {
  case HalfLabel::none: return "none";
  case HalfLabel::a: return "a";
  case HalfLabel::b: return "b";
  }
  return "none";
}

struct AnnotatedCorpus {
  std::vector<MolecularGeometry> geometries;
  std::vector<PropertyVector> properties;
  std::vector<FlagSet> flags;
  std::vector<std::vector<std::string>> descriptions;
  std::vector<SplitLabel> split;
  std::vector<HalfLabel> half;
  std::vector<std::string> ids;

  std::size_t size() const { return geometries.size(); }

  void validate() const {
    const std::size_t n = geometries.size();
    if (properties.size() != n || flags.size() != n ||
        descriptions.size() != n || split.size() != n || half.size() != n ||
        ids.size() != n)
      throw InternalError("corpus parallel lists have mismatched lengths");
  }
};

// Molecule subsets addressable by commands and evaluation.
enum class Subset : int { all = 0, train = 1, val = 2, test = 3, d_a = 4,
                          d_b = 5 };

inline std::optional<Subset> subset_from_name(std::string_view name) {
  if (name == "all") return Subset::all;
  if (name == "train") return Subset::train;
  if (name == "val") return Subset::val;
  if (name == "test") return Subset::test;
  if (name == "d_a") return Subset::d_a;
  if (name == "d_b") return Subset::d_b;
  return std::nullopt;
}

inline bool in_subset(const AnnotatedCorpus &corpus, std::size_t i,
                      Subset subset) {
  switch (subset) {
  case Subset::all: return true;
  case Subset::train: return corpus.split[i] == SplitLabel::train;
  case Subset::val: return corpus.split[i] == SplitLabel::val;
  case Subset::test: return corpus.split[i] == SplitLabel::test;
  case Subset::d_a: return corpus.half[i] == HalfLabel::a;
  case Subset::d_b: return corpus.half[i] == HalfLabel::b;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Structural flags from the perceived bond graph.

namespace detail {

struct FlagGraph {
  std::vector<std::vector<std::pair<int, int>>> adjacency;  // (neighbor, order)
  int components = 0;
  int cyclomatic = 0;
};

inline FlagGraph analyze_bond_graph(const BondGraph &graph) {
  FlagGraph out;
  out.adjacency.resize(static_cast<std::size_t>(graph.atoms));
  for (const auto &bond : graph.bonds) {
    out.adjacency[static_cast<std::size_t>(bond.i)].emplace_back(bond.j,
                                                                 bond.order);
    out.adjacency[static_cast<std::size_t>(bond.j)].emplace_back(bond.i,
                                                                 bond.order);
  }
  std::vector<bool> seen(static_cast<std::size_t>(graph.atoms), false);
  for (int start = 0; start < graph.atoms; ++start) {
    if (seen[static_cast<std::size_t>(start)])
      continue;
    ++out.components;
    std::vector<int> stack { start };
    seen[static_cast<std::size_t>(start)] = true;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (const auto &[v, order] : out.adjacency[static_cast<std::size_t>(u)]) {
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = true;
          stack.push_back(v);
        }
      }
    }
  }
  out.cyclomatic = static_cast<int>(graph.bonds.size()) - graph.atoms +
                   out.components;
  return out;
}

// Fundamental cycles from a BFS spanning forest; one cycle per non-tree edge.
inline std::vector<std::vector<int>> fundamental_cycles(const FlagGraph &fg) {
  const int n = static_cast<int>(fg.adjacency.size());
  std::vector<int> parent(static_cast<std::size_t>(n), -2);
  std::vector<int> depth(static_cast<std::size_t>(n), 0);
  std::vector<std::pair<int, int>> non_tree;

  for (int root = 0; root < n; ++root) {
    if (parent[static_cast<std::size_t>(root)] != -2)
      continue;
    parent[static_cast<std::size_t>(root)] = -1;
    std::vector<int> queue { root };
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const int u = queue[qi];
      for (const auto &[v, order] : fg.adjacency[static_cast<std::size_t>(u)]) {
        if (parent[static_cast<std::size_t>(v)] == -2) {
          parent[static_cast<std::size_t>(v)] = u;
          depth[static_cast<std::size_t>(v)] =
              depth[static_cast<std::size_t>(u)] + 1;
          queue.push_back(v);
        } else if (v != parent[static_cast<std::size_t>(u)] && u < v) {
          non_tree.emplace_back(u, v);
        }
      }
    }
  }

  std::vector<std::vector<int>> cycles;
  for (auto [u, v] : non_tree) {
    std::vector<int> path_u { u }, path_v { v };
    int a = u, b = v;
    while (a != b) {
      if (depth[static_cast<std::size_t>(a)] >=
          depth[static_cast<std::size_t>(b)]) {
        a = parent[static_cast<std::size_t>(a)];
        path_u.push_back(a);
      } else {
        b = parent[static_cast<std::size_t>(b)];
        path_v.push_back(b);
      }
    }
    std::vector<int> cycle(path_u.begin(), path_u.end());
    for (auto it = path_v.rbegin(); it != path_v.rend(); ++it) {
      if (*it != a)
        cycle.push_back(*it);
    }
    cycles.push_back(std::move(cycle));
  }
  return cycles;
}

inline int bond_order_between(const FlagGraph &fg, int u, int v) {
  for (const auto &[w, order] : fg.adjacency[static_cast<std::size_t>(u)]) {
    if (w == v)
      return order;
  }
  return 0;
}

}  // namespace detail

// Deterministic flag perception. Aromaticity and water solubility are
// heuristics: a 5- or 6-cycle of C/N atoms carrying at least two double
// bonds counts as aromatic; hydroxyl, amino, or carboxyl groups count as
// solubilizing.
inline FlagSet compute_structural_flags(const MolecularGeometry &g,
                                        const BondTable &table =
                                            BondTable::builtin()) {
  FlagSet flags;
  const BondGraph graph = perceive_bond_graph(g, table);
  const auto fg = detail::analyze_bond_graph(graph);

  if (fg.cyclomatic == 0 && graph.atoms >= 2)
    flags.add(StructuralFlag::chain);
  if (fg.cyclomatic >= 1)
    flags.add(StructuralFlag::ring);
  if (fg.cyclomatic >= 2)
    flags.add(StructuralFlag::polycyclic);

  for (const auto &cycle : detail::fundamental_cycles(fg)) {
    if (cycle.size() != 5 && cycle.size() != 6)
      continue;
    bool members_ok = true;
    int double_bonds = 0;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      const Element e = element_of_atom(g, cycle[k]);
      members_ok = members_ok && (e == Element::C || e == Element::N);
      const int next = cycle[(k + 1) % cycle.size()];
      if (detail::bond_order_between(fg, cycle[k], next) >= 2)
        ++double_bonds;
    }
    if (members_ok && double_bonds >= 2) {
      flags.add(StructuralFlag::aromatic);
      break;
    }
  }

  int nitrogen_count = 0;
  bool polar_group = false;
  for (int i = 0; i < graph.atoms; ++i) {
    const Element e = element_of_atom(g, i);
    if (e == Element::N)
      ++nitrogen_count;
    if (e == Element::O || e == Element::N) {
      for (const auto &[j, order] : fg.adjacency[static_cast<std::size_t>(i)]) {
        if (element_of_atom(g, j) == Element::H)
          polar_group = true;
      }
    }
    if (e == Element::C) {
      bool has_double_o = false, has_hydroxyl_o = false;
      for (const auto &[j, order] : fg.adjacency[static_cast<std::size_t>(i)]) {
        if (element_of_atom(g, j) != Element::O)
          continue;
        if (order == 2)
          has_double_o = true;
        if (order == 1) {
          for (const auto &[k, o2] : fg.adjacency[static_cast<std::size_t>(j)]) {
            if (element_of_atom(g, k) == Element::H && o2 >= 1)
              has_hydroxyl_o = true;
          }
        }
      }
      if (has_double_o && has_hydroxyl_o)
        flags.add(StructuralFlag::carboxyl);
    }
  }
  if (nitrogen_count >= 2)
    flags.add(StructuralFlag::nitrogen_rich);
  if (polar_group || flags.has(StructuralFlag::carboxyl))
    flags.add(StructuralFlag::water_soluble);
  return flags;
}

// ---------------------------------------------------------------------------
// Description templates.

class TemplateSet {
public:
  struct Template {
    bool is_flag = false;
    PropertyKey key = PropertyKey::Cv;
    StructuralFlag flag = StructuralFlag::chain;
    std::string text;  // property templates keep the {key:.2f} placeholder
  };

  static TemplateSet parse(std::string_view text) {
    TemplateSet set;
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

      Template tpl;
      if (line[0] == '[') {
        const auto close = line.find(']');
        if (close == std::string::npos)
          throw ParseError("templates line " + std::to_string(line_no) +
                           ": unterminated flag tag");
        auto flag = flag_from_name(line.substr(1, close - 1));
        if (!flag)
          throw ParseError("templates line " + std::to_string(line_no) +
                           ": unknown flag '" + line.substr(1, close - 1) +
                           "'");
        tpl.is_flag = true;
        tpl.flag = *flag;
        tpl.text = line.substr(line.find_first_not_of(' ', close + 1));
      } else {
        const auto open = line.find('{');
        const auto colon = line.find(":.2f}", open);
        if (open == std::string::npos || colon == std::string::npos)
          throw ParseError("templates line " + std::to_string(line_no) +
                           ": expected a {key:.2f} placeholder");
        auto key = property_from_name(
            line.substr(open + 1, colon - open - 1));
        if (!key)
          throw ParseError("templates line " + std::to_string(line_no) +
                           ": unknown property placeholder");
        tpl.key = *key;
        tpl.text = line;
      }
      set.templates_.push_back(std::move(tpl));
    }
    for (int k = 0; k < kPropertyCount; ++k) {
      if (set.property_templates(static_cast<PropertyKey>(k)).empty())
        throw InvalidConfig("template set lacks a template for property " +
                            std::string(kPropertyNames[k]));
    }
    return set;
  }

  static const TemplateSet &builtin() {
    static const TemplateSet set = parse(assets::kTemplates);
    return set;
  }

  std::vector<const Template *> property_templates(PropertyKey key) const {
    std::vector<const Template *> out;
    for (const auto &tpl : templates_) {
      if (!tpl.is_flag && tpl.key == key)
        out.push_back(&tpl);
    }
    return out;
  }

  const Template *flag_template(StructuralFlag flag) const {
    for (const auto &tpl : templates_) {
      if (tpl.is_flag && tpl.flag == flag)
        return &tpl;
    }
    return nullptr;
  }

private:
  std::vector<Template> templates_;
};

// Fills 1-3 clauses drawn from the molecule's properties and flags. The
// output always parses back through the prompt grammar to the same values at
// two-decimal precision.
inline std::string generate_description(
    const std::map<PropertyKey, double> &properties, FlagSet flags,
    const TemplateSet &templates, RandomSource &rng) {
  struct Candidate {
    bool is_flag;
    PropertyKey key;
    StructuralFlag flag;
  };
  std::vector<Candidate> pool;
  for (const auto &[key, value] : properties)
    pool.push_back(Candidate { false, key, StructuralFlag::chain });
  for (auto flag : flags.to_vector()) {
    if (templates.flag_template(flag) != nullptr)
      pool.push_back(Candidate { true, PropertyKey::Cv, flag });
  }
  if (pool.empty())
    throw InvalidInput("no properties or flags to describe");

  std::size_t clauses = 1 + rng.uniform_index(3);
  clauses = std::min(clauses, pool.size());
  for (std::size_t i = 0; i < clauses; ++i) {
    const std::size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }

  std::string out;
  for (std::size_t i = 0; i < clauses; ++i) {
    if (i > 0)
      out += " ";
    if (pool[i].is_flag) {
      out += templates.flag_template(pool[i].flag)->text;
    } else {
      const auto options = templates.property_templates(pool[i].key);
      const auto *tpl = options[rng.uniform_index(options.size())];
      const std::string placeholder =
          "{" + std::string(property_name(pool[i].key)) + ":.2f}";
      std::string text = tpl->text;
      const auto at = text.find(placeholder);
      text.replace(at, placeholder.size(),
                   format_fixed(properties.at(pool[i].key), 2));
      out += text;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Property CSV.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ','))
    cells.push_back(cell);
  if (!line.empty() && line.back() == ',')
    cells.push_back("");
  return cells;
}

}  // namespace detail

inline void write_property_csv(const AnnotatedCorpus &corpus,
                               const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write '" + path + "'");
  out << "id";
  for (int k = 0; k < kPropertyCount; ++k)
    out << "," << kPropertyNames[k];
  out << "\nunits";
  for (int k = 0; k < kPropertyCount; ++k)
    out << "," << kPropertyUnits[k];
  out << "\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out << corpus.ids[i];
    for (int k = 0; k < kPropertyCount; ++k)
      out << "," << format_fixed(corpus.properties[i][k], 6);
    out << "\n";
  }
}

inline std::map<std::string, PropertyVector>
read_property_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw IngestionError("missing property CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw IngestionError("property CSV '" + path + "' is empty");
  auto header = detail::split_csv_line(line);
  if (header.size() != kPropertyCount + 1 || header[0] != "id")
    throw IngestionError("property CSV header must be id," +
                         std::string("Cv,mu,alpha,eps_homo,eps_lumo,gap"));
  for (int k = 0; k < kPropertyCount; ++k) {
    if (header[static_cast<std::size_t>(k) + 1] != kPropertyNames[k])
      throw IngestionError("property CSV column " + std::to_string(k + 1) +
                           " must be " + kPropertyNames[k]);
  }
  if (!std::getline(in, line))
    throw IngestionError("property CSV '" + path + "' lacks a unit row");
  auto units = detail::split_csv_line(line);
  if (units.size() != kPropertyCount + 1 || units[0] != "units")
    throw IngestionError("property CSV second row must carry units");
  for (int k = 0; k < kPropertyCount; ++k) {
    const auto &unit = units[static_cast<std::size_t>(k) + 1];
    if (!is_accepted_unit(static_cast<PropertyKey>(k), unit))
      throw IngestionError("unit '" + unit + "' for " + kPropertyNames[k] +
                           " not accepted (expected " +
                           kPropertyUnits[k] + ")");
  }

  std::map<std::string, PropertyVector> out;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != kPropertyCount + 1)
      throw IngestionError(path + ":" + std::to_string(line_no) +
                           ": expected " + std::to_string(kPropertyCount + 1) +
                           " cells");
    PropertyVector values {};
    for (int k = 0; k < kPropertyCount; ++k) {
      try {
        values[k] = std::stod(cells[static_cast<std::size_t>(k) + 1]);
      } catch (const std::exception &) {
        throw IngestionError(path + ":" + std::to_string(line_no) +
                             ": bad value '" +
                             cells[static_cast<std::size_t>(k) + 1] + "'");
      }
    }
    out[cells[0]] = values;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus bundle I/O. A bundle directory holds one XYZ file per molecule, a
// property CSV, and a JSON annotation file with splits and descriptions.

inline void write_corpus_bundle(const AnnotatedCorpus &corpus,
                                const std::string &dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    write_xyz(corpus.geometries[i],
              (std::filesystem::path(dir) / (corpus.ids[i] + ".xyz")).string());
  }
  write_property_csv(corpus,
                     (std::filesystem::path(dir) / "properties.csv").string());

  nlohmann::ordered_json molecules = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    nlohmann::ordered_json flags = nlohmann::ordered_json::array();
    for (auto flag : corpus.flags[i].to_vector())
      flags.push_back(flag_name(flag));
    molecules.push_back(nlohmann::ordered_json {
        { "id", corpus.ids[i] },
        { "split", split_label_name(corpus.split[i]) },
        { "half", half_label_name(corpus.half[i]) },
        { "flags", std::move(flags) },
        { "descriptions", corpus.descriptions[i] },
    });
  }
  nlohmann::ordered_json doc {
    { "version", 1 },
    { "molecules", std::move(molecules) },
  };
  std::ofstream out(std::filesystem::path(dir) / "annotations.json");
  if (!out)
    throw IoError("cannot write annotations in '" + dir + "'");
  out << doc.dump(2) << "\n";
}

struct LoadResult {
  AnnotatedCorpus corpus;
  int rejected_molecules = 0;
};

// Loads a directory of XYZ files plus properties.csv. Molecules with
// elements outside the supported set are skipped and counted. Geometries
// come out centered; flags are recomputed from the perceived bond graph.
inline LoadResult load_qm9_like(const std::string &dir,
                                const BondTable &table =
                                    BondTable::builtin()) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IngestionError("'" + dir + "' is not a directory");

  std::vector<fs::path> files;
  for (const auto &entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".xyz")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  const auto property_map =
      read_property_csv((fs::path(dir) / "properties.csv").string());

  LoadResult result;
  AnnotatedCorpus &corpus = result.corpus;
  for (const auto &file : files) {
    const auto raw = read_xyz_raw(file.string());
    if (raw.size() != 1)
      throw IngestionError(file.string() + ": expected exactly one molecule");
    const std::string id = file.stem().string();

    bool supported = true;
    for (const auto &symbol : raw[0].symbols)
      supported = supported && element_from_symbol(symbol).has_value();
    if (!supported) {
      ++result.rejected_molecules;
      continue;
    }

    auto it = property_map.find(id);
    if (it == property_map.end())
      throw IngestionError("property CSV has no row for '" + id + "' (" +
                           file.string() + ")");

    auto g = center_of_mass_project(geometry_from_xyz(raw[0]));
    corpus.flags.push_back(compute_structural_flags(g, table));
    corpus.geometries.push_back(std::move(g));
    corpus.properties.push_back(it->second);
    corpus.descriptions.emplace_back();
    corpus.split.push_back(SplitLabel::none);
    corpus.half.push_back(HalfLabel::none);
    corpus.ids.push_back(id);
  }

  const auto annotations_path = fs::path(dir) / "annotations.json";
  if (fs::exists(annotations_path)) {
    std::ifstream in(annotations_path);
    nlohmann::json doc = nlohmann::json::parse(in);
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      by_id[corpus.ids[i]] = i;
    for (const auto &mol : doc.at("molecules")) {
      auto it = by_id.find(mol.at("id").get<std::string>());
      if (it == by_id.end())
        continue;
      const std::string split = mol.value("split", "none");
      corpus.split[it->second] =
          split == "train" ? SplitLabel::train
          : split == "val" ? SplitLabel::val
          : split == "test" ? SplitLabel::test : SplitLabel::none;
      const std::string half = mol.value("half", "none");
      corpus.half[it->second] = half == "a" ? HalfLabel::a
                                : half == "b" ? HalfLabel::b : HalfLabel::none;
      if (mol.contains("descriptions"))
        corpus.descriptions[it->second] =
            mol.at("descriptions").get<std::vector<std::string>>();
    }
  }
  corpus.validate();
  return result;
}

// ---------------------------------------------------------------------------
// Split protocol: deterministic shuffle, 100:18:13 proportions scaled to the
// corpus (remainder to train), train halved into D_a / D_b.

inline void split(AnnotatedCorpus &corpus, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < 4)
    throw InvalidInput("corpus too small to split (need >= 4 molecules)");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t { 0 });
  RandomSource rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_index(i + 1);
    std::swap(order[i], order[j]);
  }

  const std::size_t n_val = n * 18 / 131;
  const std::size_t n_test = n * 13 / 131;
  const std::size_t n_train = n - n_val - n_test;

  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t i = order[pos];
    if (pos < n_train) {
      corpus.split[i] = SplitLabel::train;
      corpus.half[i] = pos < n_train / 2 ? HalfLabel::a : HalfLabel::b;
    } else if (pos < n_train + n_val) {
      corpus.split[i] = SplitLabel::val;
      corpus.half[i] = HalfLabel::none;
    } else {
      corpus.split[i] = SplitLabel::test;
      corpus.half[i] = HalfLabel::none;
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale datasets.

enum class ToyKind : int { diatomic_clusters = 0, chain5 = 1 };

inline std::optional<ToyKind> toy_kind_from_name(std::string_view name) {
  if (name == "diatomic_clusters")
    return ToyKind::diatomic_clusters;
  if (name == "chain5")
    return ToyKind::chain5;
  return std::nullopt;
}

// diatomic_clusters: half short-bond (1.0 +- 0.05 A) and half long-bond
// (2.0 +- 0.05 A) carbon pairs, randomly oriented. chain5: five carbons at
// 1.54 A spacing with Gaussian jitter. Pseudo-properties are analytic
// functions of the bond length / chain extent.
inline AnnotatedCorpus make_toy_dataset(ToyKind kind, int n,
                                        std::uint64_t seed) {
  if (n < 1)
    throw InvalidConfig("toy dataset needs n >= 1");
  AnnotatedCorpus corpus;
  RandomSource base(seed);

  char idbuf[32];
  for (int i = 0; i < n; ++i) {
    RandomSource rng = base.fork(static_cast<std::uint64_t>(i));
    MolecularGeometry g;
    double scalar = 0.0;
    if (kind == ToyKind::diatomic_clusters) {
      const bool long_bond = i >= n / 2;
      const double d =
          (long_bond ? 2.0 : 1.0) + rng.uniform_in(-0.05, 0.05);
      Vec3 dir;
      do {
        dir = Vec3(rng.normal(), rng.normal(), rng.normal());
      } while (dir.norm() < 1e-6);
      dir.normalize();
      Mat coords(2, 3);
      coords.row(0) = (0.5 * d) * dir.transpose();
      coords.row(1) = (-0.5 * d) * dir.transpose();
      std::vector<Element> els { Element::C, Element::C };
      g = make_molecule(els, coords);
      g.centered = true;
      scalar = d;
    } else {
      Mat coords(5, 3);
      for (int a = 0; a < 5; ++a) {
        coords(a, 0) = 1.54 * a + 0.02 * rng.normal();
        coords(a, 1) = 0.02 * rng.normal();
        coords(a, 2) = 0.02 * rng.normal();
      }
      std::vector<Element> els(5, Element::C);
      g = center_of_mass_project(make_molecule(els, coords));
      scalar = (g.coords.row(4) - g.coords.row(0)).norm();
    }

    corpus.properties.push_back(PropertyVector {
        10.0 * scalar, 0.5 * scalar, scalar, -200.0 * scalar, 100.0 * scalar,
        500.0 * scalar });
    corpus.flags.push_back(compute_structural_flags(g));
    corpus.geometries.push_back(std::move(g));
    corpus.descriptions.emplace_back();
    corpus.split.push_back(SplitLabel::none);
    corpus.half.push_back(HalfLabel::none);
    std::snprintf(idbuf, sizeof(idbuf), "toy_%06d", i);
    corpus.ids.emplace_back(idbuf);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Adapters feeding other modules.

inline std::vector<MolecularGeometry>
subset_geometries(const AnnotatedCorpus &corpus, Subset subset) {
  std::vector<MolecularGeometry> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (in_subset(corpus, i, subset))
      out.push_back(corpus.geometries[i]);
  }
  return out;
}

inline AtomCountHistogram corpus_histogram(const AnnotatedCorpus &corpus,
                                           Subset subset) {
  std::vector<int> sizes;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (in_subset(corpus, i, subset))
      sizes.push_back(corpus.geometries[i].atom_count());
  }
  return AtomCountHistogram::from_sizes(sizes);
}

inline CorpusIndex make_corpus_index(const AnnotatedCorpus &corpus,
                                     Subset subset) {
  std::vector<CorpusIndexEntry> entries;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!in_subset(corpus, i, subset))
      continue;
    entries.push_back(CorpusIndexEntry { corpus.geometries[i],
                                         corpus.properties[i],
                                         corpus.flags[i], corpus.ids[i] });
  }
  return CorpusIndex(std::move(entries));
}

}  // namespace eqdiff

#endif  // EQDIFF_DATA_HPP_
