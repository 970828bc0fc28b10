// SPDX-License-Identifier: Apache-2.0
//
// Minimal deterministic SVG charts for the bench and analysis reports.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hyperalign/reward.hpp"

namespace hyperalign {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

void svg_line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<Series>& series);

void svg_scatter_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

/// Samples colored by condition over iso-density contours of every
/// condition's target (marching squares at fixed fractions of its peak).
void svg_samples_over_target(const std::filesystem::path& path, const std::string& title,
                             const TiltedTargetGrid& target, const Tensor& samples, std::span<const std::size_t> cond);

}  // namespace hyperalign
