#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "auxseg/tensor.hpp"

namespace auxseg {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Check at most this many entries, sampled without replacement; 0 checks all.
    std::size_t max_entries = 0;
    std::uint64_t sample_seed = 0;
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    double denominator_floor = 1e-7;
    /// Rounding budget of one function evaluation, in units of eps * |f|.
    /// The central difference cannot resolve gradients below about
    /// budget * eps * |f| / step, so the denominator is also floored at that
    /// resolution divided by the tolerance. Set to 0 to disable.
    double roundoff_ulps = 8.0;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Entries whose +-step stencil crossed a nondifferentiable point.
    std::size_t skipped = 0;
    /// Checked entries whose gradient exceeded the denominator floor.
    std::size_t resolved = 0;
    /// Denominator floor actually used.
    double floor = 0.0;
    bool passed = false;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares autodiff gradients of `f` against central differences.
/// `f` must rebuild its graph on each call and return a scalar.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace auxseg
