// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "scpainter/conditioning.hpp"
#include "scpainter/grid.hpp"

namespace scpainter {

/// 10 log10(1 / MSE) over all pixels and channels, for values in [0, 1].
/// Returns +inf for identical images.
[[nodiscard]] double psnr(const RgbImage& a, const RgbImage& b);

/// Fraction of covered pixels over all frames of a bundle.
[[nodiscard]] double mean_coverage(const ConditioningBundle& bundle);
[[nodiscard]] double asset_fraction(const ConditioningBundle& bundle);

struct MetricsReport {
    std::vector<double> psnr_db; ///< +inf for exact matches
    std::optional<double> mean_coverage;
    std::optional<double> asset_fraction;
    double runtime_seconds = 0.0;

    [[nodiscard]] double mean_finite_psnr() const;
    /// metrics.json and metrics.csv; infinite PSNR is written as null with a flag.
    /// Runtime is left out unless requested so reruns stay byte-identical.
    void write(const std::filesystem::path& dir, bool include_runtime = false) const;
};

} // namespace scpainter
