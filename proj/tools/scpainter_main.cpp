// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "scpainter/cli.hpp"

int main(int argc, char** argv) { return scpainter::cli::run(std::vector<std::string>(argv, argv + argc)); }
