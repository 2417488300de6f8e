// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace scpainter {

/// Process-wide cap on worker threads (the CLI's --jobs). 0 means hardware concurrency.
void set_max_workers(unsigned workers);
[[nodiscard]] unsigned max_workers();

/// Runs body(i) for i in [0, count). Work items are claimed dynamically, so
/// callers must make each item write only to storage it owns. The first
/// exception thrown by any item is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace scpainter
