//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "eqdiff/cli.hpp"

int main(int argc, char **argv) { return eqdiff::cli::run(argc, argv); }
