#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cibr/autodiff.hpp"

namespace cibr {

/// One differentiable function to certify. Probe points have entries drawn
/// uniformly from [-1, 1]; points where some relu input lies within
/// `relu_margin` of zero, or that `accept` rejects, are redrawn.
struct GradCase {
    std::string name;
    std::size_t rows = 1;
    std::size_t cols = 1;
    ScalarFn f;
    std::function<bool(const Tensor&)> accept;
};

struct GradCaseResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t points = 0;
    bool passed = false;
    std::string error;  // non-empty when the case could not be evaluated
};

struct GradSuiteOptions {
    std::size_t points = 10;
    double eps = 1e-4;
    double threshold = 1e-4;
    double relu_margin = 0.05;
    std::uint64_t seed = 0;
    std::size_t max_attempts = 200000;
};

/// Every exposed differentiable operation, the MLP, and each objective
/// (cibr_total_loss through frozen critics included). Constants inside the
/// cases come from `seed`.
std::vector<GradCase> default_grad_cases(std::uint64_t seed = 0);

GradCaseResult run_grad_case(const GradCase& c, std::size_t case_index, const GradSuiteOptions& opt);
std::vector<GradCaseResult> run_grad_suite(const std::vector<GradCase>& cases, const GradSuiteOptions& opt);

}  // namespace cibr
