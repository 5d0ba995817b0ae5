// SPDX-License-Identifier: Apache-2.0
#include "reflectmt/cli.hpp"

int main(int argc, char** argv) { return reflectmt::run_cli(argc, argv); }
