// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace uattn {

/// Worker cap read once from U_ATTN_THREADS. 0 or 1 (and unset) mean strict
/// single-threaded execution.
int worker_count();
void set_worker_count(int n);

/// Runs body(i) for i in [0, n). Work items must write disjoint outputs so the
/// result is bitwise identical for any worker count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace uattn
