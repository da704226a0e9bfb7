// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "uattn/cli.hpp"

int main(int argc, char** argv) { return uattn::run_cli(argc, argv, std::cout, std::cerr); }
