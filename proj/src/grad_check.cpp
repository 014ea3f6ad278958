#include "auxseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "auxseg/rng.hpp"

namespace auxseg {

namespace {

struct Evaluation {
    double value;
    std::uint64_t fingerprint;
};

Evaluation evaluate(const std::function<Tensor()>& f) {
    NoGradGuard no_grad;
    BranchRecorder recorder;
    const double value = f().item();
    if (!std::isfinite(value)) throw std::domain_error("grad_check: non-finite function value");
    return {value, recorder.fingerprint()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           const GradCheckOptions& options) {
    if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

    for (auto& p : params) p.zero_grad();
    std::uint64_t base_fingerprint = 0;
    double base_value = 0.0;
    {
        BranchRecorder recorder;
        Tensor out = f();
        base_fingerprint = recorder.fingerprint();
        base_value = out.item();
        if (!std::isfinite(base_value)) throw std::domain_error("grad_check: non-finite function value");
        out.backward();
    }

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);
        }
        for (double g : analytic.back()) {
            if (!std::isfinite(g)) throw std::domain_error("grad_check: non-finite analytic gradient");
        }
    }

    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi].numel(); ++i) entries.emplace_back(pi, i);
    }
    if (options.max_entries != 0 && options.max_entries < entries.size()) {
        Rng rng(options.sample_seed);
        for (std::size_t i = 0; i < options.max_entries; ++i) {
            const auto j = static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(entries.size() - 1)));
            std::swap(entries[i], entries[j]);
        }
        entries.resize(options.max_entries);
    }

    GradCheckReport report;
    const double h = options.step;
    const double resolution =
        options.roundoff_ulps * std::numeric_limits<double>::epsilon() * std::fabs(base_value) / h;
    report.floor = std::max(options.denominator_floor, resolution / options.tolerance);
    for (const auto& [pi, i] : entries) {
        auto values = params[pi].mutable_data();
        const double original = values[i];
        values[i] = original + h;
        const Evaluation plus = evaluate(f);
        values[i] = original - h;
        const Evaluation minus = evaluate(f);
        values[i] = original;

        if (plus.fingerprint != base_fingerprint || minus.fingerprint != base_fingerprint) {
            ++report.skipped;
            continue;
        }
        const double numeric = (plus.value - minus.value) / (2.0 * h);
        const double a = analytic[pi][i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), report.floor});
        const double rel = std::fabs(a - numeric) / denom;
        ++report.checked;
        if (std::fabs(a) > report.floor) ++report.resolved;
        if (report.checked == 1 || rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_param = pi;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.checked > 0 && report.max_relative_error <= options.tolerance;
    return report;
}

}  // namespace auxseg
