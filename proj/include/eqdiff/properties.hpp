//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_PROPERTIES_HPP_
#define EQDIFF_PROPERTIES_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eqdiff/core.hpp"

namespace eqdiff {

// The six conditioning properties, in canonical column order.
enum class PropertyKey : int {
  Cv = 0,
  mu = 1,
  alpha = 2,
  eps_homo = 3,
  eps_lumo = 4,
  gap = 5,
};

inline constexpr int kPropertyCount = 6;

inline constexpr std::array<const char *, kPropertyCount> kPropertyNames {
  "Cv", "mu", "alpha", "eps_homo", "eps_lumo", "gap",
};

// Canonical display units.
inline constexpr std::array<const char *, kPropertyCount> kPropertyUnits {
  "cal/mol·K", "Debye", "Bohr^3", "meV", "meV", "meV",
};

inline const char *property_name(PropertyKey key) {
  return kPropertyNames[static_cast<int>(key)];
}

inline const char *property_unit(PropertyKey key) {
  return kPropertyUnits[static_cast<int>(key)];
}

inline std::optional<PropertyKey> property_from_name(std::string_view name) {
  for (int i = 0; i < kPropertyCount; ++i) {
    if (name == kPropertyNames[i])
      return static_cast<PropertyKey>(i);
  }
  return std::nullopt;
}

// Unit strings accepted in property CSV headers.
inline bool is_accepted_unit(PropertyKey key, std::string_view unit) {
  switch (key) {
  case PropertyKey::Cv:
    return unit == "cal/mol·K" || unit == "cal/mol.K" || unit == "cal/molK" ||
           unit == "cal/mol/K" || unit == "cal/(mol K)";
  case PropertyKey::mu:
    return unit == "Debye" || unit == "D" || unit == "debye";
  case PropertyKey::alpha:
    return unit == "Bohr^3" || unit == "Bohr3" || unit == "Bohr³" ||
           unit == "bohr^3";
  case PropertyKey::eps_homo:
  case PropertyKey::eps_lumo:
  case PropertyKey::gap:
    return unit == "meV";
  }
  return false;
}

using PropertyVector = std::array<double, kPropertyCount>;

inline double property_value(const PropertyVector &props, PropertyKey key) {
  return props[static_cast<int>(key)];
}

// Structural descriptors attached to molecules and bindable from prompts.
enum class StructuralFlag : int {
  chain = 0,
  ring = 1,
  polycyclic = 2,
  aromatic = 3,
  carboxyl = 4,
  nitrogen_rich = 5,
  water_soluble = 6,
};

inline constexpr int kFlagCount = 7;

inline constexpr std::array<const char *, kFlagCount> kFlagNames {
  "chain",   "ring",          "polycyclic",    "aromatic",
  "carboxyl", "nitrogen_rich", "water_soluble",
};

inline const char *flag_name(StructuralFlag flag) {
  return kFlagNames[static_cast<int>(flag)];
}

inline std::optional<StructuralFlag> flag_from_name(std::string_view name) {
  for (int i = 0; i < kFlagCount; ++i) {
    if (name == kFlagNames[i])
      return static_cast<StructuralFlag>(i);
  }
  return std::nullopt;
}

class FlagSet {
public:
  FlagSet() = default;

  void add(StructuralFlag flag) { bits_ |= 1u << static_cast<int>(flag); }

  bool has(StructuralFlag flag) const {
    return (bits_ & (1u << static_cast<int>(flag))) != 0;
  }

  bool empty() const { return bits_ == 0; }

  int count() const { return __builtin_popcount(bits_); }

  std::vector<StructuralFlag> to_vector() const {
    std::vector<StructuralFlag> out;
    for (int i = 0; i < kFlagCount; ++i) {
      if (has(static_cast<StructuralFlag>(i)))
        out.push_back(static_cast<StructuralFlag>(i));
    }
    return out;
  }

  bool operator==(const FlagSet &) const = default;

private:
  std::uint32_t bits_ = 0;
};

}  // namespace eqdiff

#endif  // EQDIFF_PROPERTIES_HPP_
