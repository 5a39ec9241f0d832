// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pcee/cli.hpp"

int main(int argc, char** argv) { return pcee::cli::run(argc, argv); }
