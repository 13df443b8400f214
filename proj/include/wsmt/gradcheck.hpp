#pragma once

// Central finite-difference checks of every analytic backward pass, run in
// 64-bit on random small instances.

#include <cstdint>
#include <string>
#include <vector>

namespace wsmt {

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckResult {
    std::string name;
    std::size_t instances = 0;
    double max_relative_error = 0;
    double seconds = 0;

    bool passed(double tolerance = kGradCheckTolerance) const { return max_relative_error < tolerance; }
};

// Names: conv, batchnorm_train, batchnorm_eval, relu, max_pool, residual_1x1,
// fc_head, contrastive, multitask, tcn_block, siamese_pipeline.
std::vector<std::string> gradcheck_names();

GradCheckResult run_gradcheck(const std::string& name, std::size_t instances, std::uint64_t seed);
std::vector<GradCheckResult> run_gradcheck_suite(std::size_t instances = 100, std::uint64_t seed = 0);

}  // namespace wsmt
