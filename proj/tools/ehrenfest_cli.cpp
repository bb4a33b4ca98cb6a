// SPDX-License-Identifier: Apache-2.0
#include "ehrenfest/cli.hpp"

int main(int argc, char** argv) { return ehrenfest::cli::run(argc, argv); }
