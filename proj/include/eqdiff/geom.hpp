//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_GEOM_HPP_
#define EQDIFF_GEOM_HPP_

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "eqdiff/core.hpp"

namespace eqdiff {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

// Atom vocabulary: 5-way one-hot over {H, C, N, O, F} plus one integer
// formal-charge column.
enum class Element : int { H = 0, C = 1, N = 2, O = 3, F = 4 };

inline constexpr int kElementCount = 5;
inline constexpr int kFeatureWidth = kElementCount + 1;
inline constexpr int kChargeColumn = kElementCount;

inline constexpr std::array<const char *, kElementCount> kElementSymbols {
  "H", "C", "N", "O", "F",
};

inline const char *element_symbol(Element e) {
  return kElementSymbols[static_cast<int>(e)];
}

inline std::optional<Element> element_from_symbol(std::string_view symbol) {
  for (int i = 0; i < kElementCount; ++i) {
    if (symbol == kElementSymbols[i])
      return static_cast<Element>(i);
  }
  return std::nullopt;
}

// Symbols the XYZ parser recognizes; anything else is a parse error. Symbols
// here but outside the model vocabulary are rejected later at ingestion.
inline bool is_known_periodic_symbol(std::string_view s) {
  static const std::unordered_set<std::string_view> kSymbols {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
    "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr",
    "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
    "I",  "Sn", "Sb", "Te", "Pb",
  };
  return kSymbols.contains(s);
}

// 3D molecular geometry: paired atom coordinates (M x 3, Angstrom) and atom
// features (M x 6). Latent states carry arbitrary reals in `feats`; decoded
// states satisfy the one-hot invariant.
struct MolecularGeometry {
  Mat coords;
  Mat feats;
  bool centered = false;

  int atom_count() const { return static_cast<int>(coords.rows()); }
};

inline MolecularGeometry make_geometry(Mat coords, Mat feats,
                                       bool centered = false) {
  if (coords.rows() < 1)
    throw InvalidInput("geometry must contain at least one atom");
  if (coords.cols() != 3)
    throw InvalidInput("coords must have 3 columns");
  if (feats.rows() != coords.rows() || feats.cols() != kFeatureWidth)
    throw InvalidInput("feats must be M x " + std::to_string(kFeatureWidth));
  return MolecularGeometry { std::move(coords), std::move(feats), centered };
}

inline Mat onehot_features(std::span<const Element> elements,
                           std::span<const int> charges = {}) {
  if (!charges.empty() && charges.size() != elements.size())
    throw InvalidInput("charges must match element count");
  Mat feats = Mat::Zero(static_cast<Eigen::Index>(elements.size()),
                        kFeatureWidth);
  for (std::size_t i = 0; i < elements.size(); ++i) {
    feats(static_cast<Eigen::Index>(i), static_cast<int>(elements[i])) = 1.0;
    if (!charges.empty())
      feats(static_cast<Eigen::Index>(i), kChargeColumn) = charges[i];
  }
  return feats;
}

inline MolecularGeometry make_molecule(std::span<const Element> elements,
                                       Mat coords,
                                       std::span<const int> charges = {}) {
  return make_geometry(std::move(coords), onehot_features(elements, charges));
}

inline Element element_of_atom(const MolecularGeometry &g, int atom) {
  Eigen::Index best = 0;
  g.feats.row(atom).head(kElementCount).maxCoeff(&best);
  return static_cast<Element>(best);
}

inline int charge_of_atom(const MolecularGeometry &g, int atom) {
  return static_cast<int>(std::lround(g.feats(atom, kChargeColumn)));
}

inline bool is_decoded(const MolecularGeometry &g, double tol = 1e-9) {
  for (int i = 0; i < g.atom_count(); ++i) {
    int ones = 0;
    for (int c = 0; c < kElementCount; ++c) {
      double v = g.feats(i, c);
      if (std::abs(v - 1.0) <= tol)
        ++ones;
      else if (std::abs(v) > tol)
        return false;
    }
    if (ones != 1)
      return false;
    double charge = g.feats(i, kChargeColumn);
    if (std::abs(charge - std::round(charge)) > tol)
      return false;
  }
  return true;
}

inline bool is_centered(const Mat &coords, double tol = 1e-9) {
  return coords.colwise().sum().cwiseAbs().maxCoeff() <= tol;
}

inline bool is_centered(const MolecularGeometry &g, double tol = 1e-9) {
  return is_centered(g.coords, tol);
}

// Subtracts the column mean from every row. Applied to the coordinate block
// this is the zero-center-of-mass projection.
inline Mat project_to_zero_mean(const Mat &m) {
  return m.rowwise() - m.colwise().mean();
}

inline MolecularGeometry center_of_mass_project(const MolecularGeometry &g) {
  if (g.atom_count() < 1)
    throw InvalidInput("cannot center an empty geometry");
  return MolecularGeometry { project_to_zero_mean(g.coords), g.feats, true };
}

// Orthogonal transformation of 3-space; validated on construction, so any
// held Rotation satisfies R^T R = I and det R = +-1 (reflections allowed).
class Rotation {
public:
  explicit Rotation(const Mat3 &matrix): matrix_(matrix) {
    constexpr double tol = 1e-9;
    Mat3 gram = matrix.transpose() * matrix;
    if (((gram - Mat3::Identity()).cwiseAbs().maxCoeff()) > tol)
      throw InvalidInput("matrix is not orthogonal");
    if (std::abs(std::abs(matrix.determinant()) - 1.0) > tol)
      throw InvalidInput("matrix determinant is not +-1");
  }

  static Rotation identity() { return Rotation(Mat3::Identity()); }

  const Mat3 &matrix() const { return matrix_; }

private:
  Mat3 matrix_;
};

inline MolecularGeometry apply_rotation(const MolecularGeometry &g,
                                        const Rotation &r) {
  return MolecularGeometry { g.coords * r.matrix().transpose(), g.feats,
                             g.centered };
}

inline double coordinate_rmsd(const Mat &a, const Mat &b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput("RMSD requires equal shapes");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.rows()));
}

// Orthogonal matrix minimizing RMSD between reference rotated by R and the
// target, both centered. Minimizes over all of O(3); for degenerate inputs
// any minimizer may be returned.
inline Rotation kabsch_align(const MolecularGeometry &reference,
                             const MolecularGeometry &target) {
  if (reference.atom_count() != target.atom_count())
    throw InvalidInput("kabsch_align requires equal atom counts");
  if (!is_centered(reference, 1e-6) || !is_centered(target, 1e-6))
    throw InvalidInput("kabsch_align requires centered geometries");

  Mat3 cross = reference.coords.transpose() * target.coords;
  Eigen::JacobiSVD<Mat3> svd(cross,
                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 rot = svd.matrixV() * svd.matrixU().transpose();
  // Clean up round-off so the Rotation invariant check passes.
  Eigen::JacobiSVD<Mat3> polish(rot,
                                Eigen::ComputeFullU | Eigen::ComputeFullV);
  return Rotation(polish.matrixU() * polish.matrixV().transpose());
}

// ---------------------------------------------------------------------------
// XYZ file I/O.
//
// Format: line 1 = atom count, line 2 = comment (the writer emits
// `charge=<c1,c2,...>`), then one `SYMBOL x y z` line per atom with
// 6-decimal fixed-point coordinates. Files may hold several molecules
// back to back.

struct XyzMolecule {
  std::vector<std::string> symbols;
  Mat coords;
  std::vector<int> charges;
  std::string comment;
};

namespace detail {

inline std::vector<std::string> split_whitespace(const std::string &line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok)
    out.push_back(tok);
  return out;
}

inline std::string trim(const std::string &s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<int> parse_charge_list(const std::string &comment,
                                          int atom_count,
                                          const std::string &where) {
  std::vector<int> charges(atom_count, 0);
  std::size_t pos = comment.find("charge=");
  if (pos == std::string::npos)
    return charges;
  std::size_t begin = pos + 7;
  std::size_t end = comment.find_first_of(" \t", begin);
  std::string list = comment.substr(
      begin, end == std::string::npos ? std::string::npos : end - begin);
  std::vector<int> parsed;
  std::istringstream in(list);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      parsed.push_back(std::stoi(tok));
    } catch (const std::exception &) {
      throw ParseError(where + ": bad charge list entry '" + tok + "'");
    }
  }
  if (static_cast<int>(parsed.size()) != atom_count)
    throw ParseError(where + ": charge list length " +
                     std::to_string(parsed.size()) + " does not match atom count " +
                     std::to_string(atom_count));
  return parsed;
}

}  // namespace detail

inline std::vector<XyzMolecule> read_xyz_raw(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path + "'");

  std::vector<XyzMolecule> molecules;
  std::string line;
  int line_no = 0;

  auto next_line = [&](std::string &out) {
    if (!std::getline(in, out))
      return false;
    ++line_no;
    return true;
  };
  auto where = [&](int ln) { return path + ":" + std::to_string(ln); };

  while (next_line(line)) {
    std::string trimmed = detail::trim(line);
    if (trimmed.empty())
      continue;

    int count = 0;
    try {
      std::size_t used = 0;
      count = std::stoi(trimmed, &used);
      if (used != trimmed.size())
        throw std::invalid_argument("trailing characters");
    } catch (const std::exception &) {
      throw ParseError(where(line_no) + ": expected atom count, got '" +
                       trimmed + "'");
    }
    if (count < 1)
      throw ParseError(where(line_no) + ": atom count must be positive");

    XyzMolecule mol;
    int header_line = line_no;
    if (!next_line(mol.comment))
      throw ParseError(where(header_line) + ": missing comment line");

    mol.coords = Mat(count, 3);
    for (int i = 0; i < count; ++i) {
      if (!next_line(line))
        throw ParseError(where(header_line) + ": header declares " +
                         std::to_string(count) + " atoms but file ends after " +
                         std::to_string(i));
      auto fields = detail::split_whitespace(line);
      if (fields.size() != 4)
        throw ParseError(where(line_no) + ": expected 'SYMBOL x y z'");
      if (!is_known_periodic_symbol(fields[0]))
        throw ParseError(where(line_no) + ": unknown element symbol '" +
                         fields[0] + "'");
      mol.symbols.push_back(fields[0]);
      for (int c = 0; c < 3; ++c) {
        try {
          std::size_t used = 0;
          mol.coords(i, c) = std::stod(fields[c + 1], &used);
          if (used != fields[c + 1].size())
            throw std::invalid_argument("trailing characters");
        } catch (const std::exception &) {
          throw ParseError(where(line_no) + ": bad coordinate '" +
                           fields[c + 1] + "'");
        }
      }
    }
    mol.charges = detail::parse_charge_list(mol.comment, count,
                                            where(header_line + 1));
    molecules.push_back(std::move(mol));
  }
  return molecules;
}

inline MolecularGeometry geometry_from_xyz(const XyzMolecule &mol) {
  std::vector<Element> elements;
  elements.reserve(mol.symbols.size());
  for (const auto &s : mol.symbols) {
    auto e = element_from_symbol(s);
    if (!e)
      throw InvalidInput("element '" + s +
                         "' is outside the supported set {H,C,N,O,F}");
    elements.push_back(*e);
  }
  return make_molecule(elements, mol.coords, mol.charges);
}

inline std::vector<MolecularGeometry> read_xyz(const std::string &path) {
  std::vector<MolecularGeometry> out;
  for (const auto &mol : read_xyz_raw(path))
    out.push_back(geometry_from_xyz(mol));
  return out;
}

inline void write_xyz(std::span<const MolecularGeometry> geometries,
                      const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write '" + path + "'");
  for (const auto &g : geometries) {
    if (!is_decoded(g))
      throw InvalidInput("write_xyz requires decoded geometries");
    out << g.atom_count() << "\n";
    out << "charge=";
    for (int i = 0; i < g.atom_count(); ++i)
      out << (i ? "," : "") << charge_of_atom(g, i);
    out << "\n";
    char buf[128];
    for (int i = 0; i < g.atom_count(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f",
                    element_symbol(element_of_atom(g, i)), g.coords(i, 0),
                    g.coords(i, 1), g.coords(i, 2));
      out << buf << "\n";
    }
  }
  if (!out)
    throw IoError("failed writing '" + path + "'");
}

inline void write_xyz(const MolecularGeometry &g, const std::string &path) {
  write_xyz(std::span<const MolecularGeometry>(&g, 1), path);
}

}  // namespace eqdiff

#endif  // EQDIFF_GEOM_HPP_
