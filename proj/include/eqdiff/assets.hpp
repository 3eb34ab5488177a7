//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_ASSETS_HPP_
#define EQDIFF_ASSETS_HPP_

#include <string_view>

namespace eqdiff::assets {

// Built-in copies of the plain-text assets shipped under assets/. The files
// are the source of truth for customization; these defaults keep binaries
// self-contained. A unit test pins file and embedded copies together.

inline constexpr std::string_view kBondTable = R"(# bond-table v1
# Covalent radii in Angstrom and allowed valencies per element. Radius sums
# plus the margins below give per-order distance thresholds.
radius H 0.31
radius C 0.76
radius N 0.71
radius O 0.66
radius F 0.57
valency H 1
valency C 4
valency N 3
valency O 2
valency F 1
single_margin 0.40
double_offset -0.11
triple_offset -0.22
)";

inline constexpr std::string_view kSynonyms = R"(# synonyms v1
# phrase => flag:<name> | percentile:<property>:<p>
simple chain structure => flag:chain
chain structure => flag:chain
linear chain => flag:chain
acyclic => flag:chain
ring => flag:ring
cyclic => flag:ring
polycyclic => flag:polycyclic
aromatic => flag:aromatic
heteroarene => flag:aromatic
arene => flag:aromatic
carboxyl group => flag:carboxyl
carboxylic acid => flag:carboxyl
multiple nitrogen atoms => flag:nitrogen_rich
nitrogen-rich => flag:nitrogen_rich
rich in nitrogen => flag:nitrogen_rich
soluble in water => flag:water_soluble
water-soluble => flag:water_soluble
water soluble => flag:water_soluble
small HOMO-LUMO gap => percentile:gap:0.05
small HOMO-LUMO gaps => percentile:gap:0.05
low energy gap => percentile:gap:0.05
large HOMO-LUMO gap => percentile:gap:0.95
large HOMO-LUMO gaps => percentile:gap:0.95
low heat capacity => percentile:Cv:0.05
high heat capacity => percentile:Cv:0.95
low polarizability => percentile:alpha:0.05
high polarizability => percentile:alpha:0.95
)";

inline constexpr std::string_view kTemplates = R"(# templates v1
# One template per line. Property templates carry a {key:.2f} placeholder;
# lines tagged [flag] describe a structural flag.
This molecule has a heat capacity of {Cv:.2f} cal/mol·K.
This molecule has a dipole moment of {mu:.2f} D.
It has a polarizability of {alpha:.2f} Bohr^3.
Its HOMO energy is {eps_homo:.2f} meV.
Its LUMO energy is {eps_lumo:.2f} meV.
It has a HOMO-LUMO gap of {gap:.2f} meV.
[chain] It is a simple chain structure.
[ring] It contains a ring.
[polycyclic] It is a polycyclic compound.
[aromatic] It is an aromatic compound.
[carboxyl] It has at least one carboxyl group.
[nitrogen_rich] It contains multiple nitrogen atoms.
[water_soluble] It is soluble in water.
)";

}  // namespace eqdiff::assets

#endif  // EQDIFF_ASSETS_HPP_
