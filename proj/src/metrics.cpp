// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "scpainter/errors.hpp"

namespace scpainter {

double psnr(const RgbImage& a, const RgbImage& b) {
    if (!a.same_shape(b)) {
        throw DimensionMismatch("psnr: images differ in size");
    }
    if (a.size() == 0) {
        throw InputError("psnr: empty images");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += (a.values()[i] - b.values()[i]).squaredNorm();
    }
    const double mse = sum / (3.0 * static_cast<double>(a.size()));
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

namespace {
double mean_of(const Tensor4& t) {
    double sum = 0.0;
    for (double v : t.values()) {
        sum += v;
    }
    return t.values().empty() ? 0.0 : sum / static_cast<double>(t.values().size());
}
} // namespace

double mean_coverage(const ConditioningBundle& bundle) { return mean_of(bundle.coverage); }

double asset_fraction(const ConditioningBundle& bundle) { return mean_of(bundle.asset_mask); }

double MetricsReport::mean_finite_psnr() const {
    double sum = 0.0;
    int count = 0;
    for (double p : psnr_db) {
        if (std::isfinite(p)) {
            sum += p;
            ++count;
        }
    }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / count;
}

void MetricsReport::write(const std::filesystem::path& dir, bool include_runtime) const {
    using nlohmann::json;
    std::filesystem::create_directories(dir);
    auto number_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };

    json frames = json::array();
    int infinite = 0;
    for (std::size_t i = 0; i < psnr_db.size(); ++i) {
        const bool inf = std::isinf(psnr_db[i]);
        infinite += inf ? 1 : 0;
        frames.push_back({{"frame", i}, {"psnr_db", number_or_null(psnr_db[i])}, {"infinite", inf}});
    }
    json root{{"frames", frames},
              {"frame_count", psnr_db.size()},
              {"infinite_count", infinite},
              {"mean_finite_psnr_db", number_or_null(mean_finite_psnr())}};
    root["mean_coverage"] = mean_coverage ? json(*mean_coverage) : json(nullptr);
    root["asset_fraction"] = asset_fraction ? json(*asset_fraction) : json(nullptr);
    if (include_runtime) {
        root["runtime_seconds"] = runtime_seconds;
    }
    std::ofstream(dir / "metrics.json") << root.dump(2) << "\n";

    std::ofstream csv(dir / "metrics.csv");
    csv << "frame,psnr_db,infinite\n";
    csv.precision(17);
    for (std::size_t i = 0; i < psnr_db.size(); ++i) {
        const bool inf = std::isinf(psnr_db[i]);
        csv << i << ',';
        if (!inf) {
            csv << psnr_db[i];
        }
        csv << ',' << (inf ? 1 : 0) << '\n';
    }
    if (!csv) {
        throw InputError("cannot write metrics to " + dir.string());
    }
}

} // namespace scpainter
