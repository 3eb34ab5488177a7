//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "eqdiff/data.hpp"

#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace eqdiff;
using eqdiff::testing::TempDir;

namespace {

std::string read_file(const std::string &path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

MolecularGeometry formic_acid() {
  // C bonded to a double-bond O, a hydroxyl O, and an aldehyde H.
  Mat coords(5, 3);
  coords << 0.0, 0.0, 0.0,        // C
            1.22, 0.0, 0.0,       // O (double)
            -0.78, 1.11, 0.0,     // O (single, hydroxyl)
            -0.78, 2.08, 0.0,     // H on hydroxyl O
            -0.55, -0.95, 0.0;    // H on C
  std::vector<Element> els { Element::C, Element::O, Element::O, Element::H,
                             Element::H };
  return make_molecule(els, coords);
}

MolecularGeometry benzene_ring() {
  Mat coords(6, 3);
  for (int k = 0; k < 6; ++k) {
    const double angle = M_PI / 3.0 * k;
    coords(k, 0) = 1.39 * std::cos(angle);
    coords(k, 1) = 1.39 * std::sin(angle);
    coords(k, 2) = 0.0;
  }
  std::vector<Element> els(6, Element::C);
  return make_molecule(els, coords);
}

}  // namespace

TEST_CASE("shipped assets match the embedded copies") {
  const std::string root = EQDIFF_SOURCE_DIR;
  REQUIRE(read_file(root + "/assets/bond_table.txt") == assets::kBondTable);
  REQUIRE(read_file(root + "/assets/synonyms.txt") == assets::kSynonyms);
  REQUIRE(read_file(root + "/assets/templates.txt") == assets::kTemplates);
}

TEST_CASE("structural flag perception") {
  SECTION("formic acid carries carboxyl and solubility flags") {
    auto flags = compute_structural_flags(formic_acid());
    REQUIRE(flags.has(StructuralFlag::carboxyl));
    REQUIRE(flags.has(StructuralFlag::water_soluble));
    REQUIRE(flags.has(StructuralFlag::chain));
    REQUIRE_FALSE(flags.has(StructuralFlag::ring));
  }

  SECTION("benzene is an aromatic ring") {
    auto flags = compute_structural_flags(benzene_ring());
    REQUIRE(flags.has(StructuralFlag::ring));
    REQUIRE(flags.has(StructuralFlag::aromatic));
    REQUIRE_FALSE(flags.has(StructuralFlag::polycyclic));
    REQUIRE_FALSE(flags.has(StructuralFlag::chain));
  }

  SECTION("two nitrogens set nitrogen_rich") {
    Mat coords(2, 3);
    coords << 0, 0, 0, 1.45, 0, 0;
    std::vector<Element> els { Element::N, Element::N };
    auto flags = compute_structural_flags(make_molecule(els, coords));
    REQUIRE(flags.has(StructuralFlag::nitrogen_rich));
  }
}

TEST_CASE("toy datasets") {
  SECTION("diatomic clusters form two tight distance modes") {
    auto corpus = make_toy_dataset(ToyKind::diatomic_clusters, 200, 7);
    REQUIRE(corpus.size() == 200);
    int short_bonds = 0, long_bonds = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const double d = (corpus.geometries[i].coords.row(0) -
                        corpus.geometries[i].coords.row(1)).norm();
      if (std::abs(d - 1.0) <= 0.05 + 1e-12)
        ++short_bonds;
      else if (std::abs(d - 2.0) <= 0.05 + 1e-12)
        ++long_bonds;
      REQUIRE(corpus.properties[i][static_cast<int>(PropertyKey::alpha)] ==
              Catch::Approx(d).margin(1e-12));
    }
    REQUIRE(short_bonds == 100);
    REQUIRE(long_bonds == 100);
  }

  SECTION("chain5 spacing") {
    auto corpus = make_toy_dataset(ToyKind::chain5, 10, 3);
    for (const auto &g : corpus.geometries) {
      REQUIRE(g.atom_count() == 5);
      for (int a = 0; a + 1 < 5; ++a) {
        const double d = (g.coords.row(a) - g.coords.row(a + 1)).norm();
        REQUIRE(d == Catch::Approx(1.54).margin(0.2));
      }
    }
  }

  SECTION("same seed reproduces the corpus") {
    auto a = make_toy_dataset(ToyKind::diatomic_clusters, 20, 9);
    auto b = make_toy_dataset(ToyKind::diatomic_clusters, 20, 9);
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(a.geometries[i].coords == b.geometries[i].coords);
  }

  SECTION("unknown kind name") {
    REQUIRE_FALSE(toy_kind_from_name("hexagons").has_value());
  }
}

TEST_CASE("split protocol") {
  SECTION("131 molecules follow the 100/18/13 proportions") {
    auto corpus = make_toy_dataset(ToyKind::diatomic_clusters, 131, 1);
    split(corpus, 5);
    int train = 0, val = 0, test = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      train += corpus.split[i] == SplitLabel::train;
      val += corpus.split[i] == SplitLabel::val;
      test += corpus.split[i] == SplitLabel::test;
      a += corpus.half[i] == HalfLabel::a;
      b += corpus.half[i] == HalfLabel::b;
    }
    REQUIRE(train == 100);
    REQUIRE(val == 18);
    REQUIRE(test == 13);
    REQUIRE(a == 50);
    REQUIRE(b == 50);
  }

  SECTION("same seed twice gives identical labels") {
    auto a = make_toy_dataset(ToyKind::diatomic_clusters, 57, 2);
    auto b = make_toy_dataset(ToyKind::diatomic_clusters, 57, 2);
    split(a, 17);
    split(b, 17);
    REQUIRE(a.split == b.split);
    REQUIRE(a.half == b.half);
  }

  SECTION("halves are disjoint and cover train for 100 seeds") {
    auto corpus = make_toy_dataset(ToyKind::diatomic_clusters, 57, 2);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      split(corpus, seed);
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const bool is_train = corpus.split[i] == SplitLabel::train;
        const bool in_half = corpus.half[i] != HalfLabel::none;
        REQUIRE(is_train == in_half);
      }
    }
  }

  SECTION("tiny corpus is rejected") {
    auto corpus = make_toy_dataset(ToyKind::diatomic_clusters, 3, 2);
    REQUIRE_THROWS_AS(split(corpus, 1), InvalidInput);
  }
}

TEST_CASE("description generation") {
  RandomSource rng(5);

  SECTION("single property fills the canonical template") {
    std::map<PropertyKey, double> props { { PropertyKey::mu, 2.5 } };
    auto text = generate_description(props, FlagSet {},
                                     TemplateSet::builtin(), rng);
    REQUIRE(text == "This molecule has a dipole moment of 2.50 D.");
  }

  SECTION("carboxyl flag renders its clause") {
    FlagSet flags;
    flags.add(StructuralFlag::carboxyl);
    std::map<PropertyKey, double> props;
    auto text = generate_description(props, flags, TemplateSet::builtin(),
                                     rng);
    REQUIRE(text.find("carboxyl group") != std::string::npos);
  }

  SECTION("descriptions round-trip through the grammar") {
    RandomSource gen_rng(11);
    for (int rep = 0; rep < 200; ++rep) {
      std::map<PropertyKey, double> props;
      for (int k = 0; k < kPropertyCount; ++k)
        props[static_cast<PropertyKey>(k)] = gen_rng.uniform_in(-400.0, 400.0);
      FlagSet flags;
      if (rep % 3 == 0)
        flags.add(StructuralFlag::carboxyl);
      if (rep % 4 == 0)
        flags.add(StructuralFlag::chain);

      auto text = generate_description(props, flags, TemplateSet::builtin(),
                                       gen_rng);
      auto record = parse_prompt(text);
      for (const auto &[key, target] : record.targets) {
        REQUIRE_FALSE(target.is_percentile);
        REQUIRE(std::abs(target.value - props.at(key)) <= 0.005);
      }
      for (auto flag : record.flags.to_vector())
        REQUIRE(flags.has(flag));
    }
  }
}

TEST_CASE("corpus bundle round trip") {
  TempDir tmp("bundle");
  auto corpus = make_toy_dataset(ToyKind::diatomic_clusters, 12, 4);
  split(corpus, 9);
  RandomSource rng(2);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::map<PropertyKey, double> props;
    for (int k = 0; k < kPropertyCount; ++k)
      props[static_cast<PropertyKey>(k)] = corpus.properties[i][k];
    corpus.descriptions[i].push_back(generate_description(
        props, corpus.flags[i], TemplateSet::builtin(), rng));
  }

  const std::string dir = tmp.file("bundle");
  write_corpus_bundle(corpus, dir);
  auto loaded = load_qm9_like(dir);

  SECTION("all molecules load back centered") {
    REQUIRE(loaded.corpus.size() == corpus.size());
    REQUIRE(loaded.rejected_molecules == 0);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      REQUIRE(is_centered(loaded.corpus.geometries[i], 1e-9));
      REQUIRE((loaded.corpus.geometries[i].coords - corpus.geometries[i].coords)
                  .cwiseAbs()
                  .maxCoeff() < 1e-6);
      REQUIRE(loaded.corpus.properties[i][2] ==
              Catch::Approx(corpus.properties[i][2]).margin(1e-6));
      REQUIRE(loaded.corpus.split[i] == corpus.split[i]);
      REQUIRE(loaded.corpus.half[i] == corpus.half[i]);
      REQUIRE(loaded.corpus.descriptions[i] == corpus.descriptions[i]);
    }
  }

  SECTION("rewriting the bundle is byte identical") {
    const std::string again = tmp.file("bundle_again");
    write_corpus_bundle(corpus, again);
    REQUIRE(read_file(dir + "/annotations.json") ==
            read_file(again + "/annotations.json"));
    REQUIRE(read_file(dir + "/properties.csv") ==
            read_file(again + "/properties.csv"));
  }

  SECTION("unsupported elements are rejected with a warning count") {
    std::ofstream out(dir + "/zz_sulfur.xyz");
    out << "1\ncharge=0\nS 0.000000 0.000000 0.000000\n";
    out.close();
    // The sulfur file has no CSV row, but it is rejected before the lookup.
    auto reloaded = load_qm9_like(dir);
    REQUIRE(reloaded.rejected_molecules == 1);
    REQUIRE(reloaded.corpus.size() == corpus.size());
  }

  SECTION("missing CSV row names the file") {
    std::ofstream out(dir + "/zz_extra.xyz");
    out << "1\ncharge=0\nC 0.000000 0.000000 0.000000\n";
    out.close();
    REQUIRE_THROWS_WITH(load_qm9_like(dir),
                        Catch::Matchers::ContainsSubstring("zz_extra"));
    std::filesystem::remove(dir + "/zz_extra.xyz");
  }

  SECTION("unit gate") {
    auto csv = read_file(dir + "/properties.csv");
    REQUIRE(csv.find("Debye") != std::string::npos);
    const auto pos = csv.find("meV,meV,meV");
    REQUIRE(pos != std::string::npos);
    std::string bad = csv;
    bad.replace(pos, 11, "meV,meV,eV\n");
    std::ofstream out(dir + "/properties.csv");
    out << bad;
    out.close();
    REQUIRE_THROWS_WITH(load_qm9_like(dir),
                        Catch::Matchers::ContainsSubstring("eV") &&
                            Catch::Matchers::ContainsSubstring("gap"));
  }
}

TEST_CASE("corpus adapters") {
  auto corpus = make_toy_dataset(ToyKind::diatomic_clusters, 40, 4);
  split(corpus, 9);

  SECTION("histogram is degenerate at two atoms") {
    auto hist = corpus_histogram(corpus, Subset::train);
    REQUIRE(hist.counts() == std::vector<int> { 2 });
    REQUIRE(hist.probabilities()[0] == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("corpus index respects the subset") {
    auto index = make_corpus_index(corpus, Subset::train);
    std::size_t train_count = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      train_count += corpus.split[i] == SplitLabel::train;
    REQUIRE(index.entries().size() == train_count);
  }

  SECTION("subset geometries match the labels") {
    auto val = subset_geometries(corpus, Subset::val);
    std::size_t val_count = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      val_count += corpus.split[i] == SplitLabel::val;
    REQUIRE(val.size() == val_count);
  }
}
