// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

namespace scpainter::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `scpainter` tool. args[0] is the program name.
int run(const std::vector<std::string>& args);

/// Runs `body` and maps its outcome to an exit code: scpainter::Error is a user-input
/// error (2), any other exception an internal failure (1).
int guarded(const std::function<void()>& body);

} // namespace scpainter::cli
