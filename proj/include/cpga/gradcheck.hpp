#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cpga/tensor.hpp"

namespace cpga {

struct GradcheckResult {
    std::string op;
    double max_rel_error = 0;
    double threshold = 0;
    std::size_t instances = 0;
    bool passed = false;
};

struct GradcheckOptions {
    std::size_t instances = 20;
    std::size_t max_coords = 48;         // sampled coordinates per input tensor
    std::size_t max_total_coords = 192;  // spread over all inputs of a case
    double step = 1e-6;
    std::uint64_t seed = 0;
};

inline constexpr double kOpThreshold = 1e-5;
inline constexpr double kCompositeThreshold = 1e-3;

/// Builds the inputs of one random instance and the function under test.
struct GradcheckCase {
    std::vector<Tensor<double>> inputs;  // leaves that receive gradients
    std::function<Tensor<double>()> fn;
    /// Drop coordinates whose one-sided differences disagree, i.e. where the
    /// stencil straddles a kink.
    bool screen_kinks = false;
};

struct GradcheckSpec {
    std::string name;
    double threshold;
    std::function<GradcheckCase(std::uint64_t seed)> make;
};

/// Relative error ||a - n|| / max(||a||, ||n||), 0 when both vanish.
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

/// Central-difference check of one case against reverse mode, using the
/// scalar sum(fn() * w) with fixed random weights w.
double check_case(const GradcheckCase& c, const GradcheckOptions& options, std::uint64_t seed);

GradcheckResult run_check(const GradcheckSpec& spec, const GradcheckOptions& options);

/// Every differentiable op, block, loss, and the full model.
std::vector<GradcheckSpec> gradcheck_suite();

/// Runs the checks whose name equals or starts with one of `filter`
/// (all when empty). Throws std::invalid_argument when nothing matches.
std::vector<GradcheckResult> run_gradcheck(const std::vector<std::string>& filter, const GradcheckOptions& options = {});

}  // namespace cpga
