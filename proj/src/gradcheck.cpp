#include "itnas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "itnas/error.hpp"

namespace itnas::ad {

namespace {

double evaluate(const std::function<Tensor()>& objective) {
    Tape::active().reset();
    NoGradGuard no_grad;
    const double value = objective().item();
    Tape::active().reset();
    return value;
}

std::vector<std::size_t> coordinates(std::size_t count, std::size_t limit) {
    std::vector<std::size_t> out;
    if (limit == 0 || limit >= count) {
        out.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            out[i] = i;
        }
        return out;
    }
    for (std::size_t k = 0; k < limit; ++k) {
        out.push_back(k * count / limit);
    }
    return out;
}

} // namespace

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& objective,
                                   std::span<Tensor> params, const FiniteDiffOptions& options) {
    for (Tensor& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }

    Tape::active().reset();
    const Tensor root = objective();
    if (root.numel() != 1) {
        throw ShapeError("finite_diff_check: objective must return a scalar");
    }
    const double base = root.item();
    backward(root);
    std::vector<std::vector<double>> analytic;
    for (const Tensor& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);
        }
    }
    Tape::active().reset();

    const double repeat = evaluate(objective);
    if (repeat != base) {
        throw NumericError("finite_diff_check: objective is not deterministic");
    }

    FiniteDiffReport report;
    const double h = options.step;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        for (std::size_t idx : coordinates(p.numel(), options.max_coords_per_param)) {
            const double original = p.mutable_values()[idx];
            p.mutable_values()[idx] = original + h;
            const double plus = evaluate(objective);
            p.mutable_values()[idx] = original - h;
            const double minus = evaluate(objective);
            p.mutable_values()[idx] = original;

            const double numeric = (plus - minus) / (2.0 * h);
            const double err =
                std::abs(analytic[pi][idx] - numeric) / std::max(1.0, std::abs(numeric));
            ++report.coords_checked;
            if (err > report.max_rel_error || !std::isfinite(err)) {
                report.max_rel_error = std::isfinite(err) ? err : INFINITY;
                report.worst_param = pi;
                report.worst_index = idx;
                report.worst_analytic = analytic[pi][idx];
                report.worst_numeric = numeric;
            }
        }
    }
    for (Tensor& p : params) {
        p.zero_grad();
    }
    return report;
}

} // namespace itnas::ad
