// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace uattn {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  // gradcheck over tolerance
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitInternal = 5,
};

/// Entry point of the `uattn` tool: train | infer | eval | viz-attn | gradcheck.
/// Reports go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace uattn
