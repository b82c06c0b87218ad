#ifndef ITNAS_GRADCHECK_HPP
#define ITNAS_GRADCHECK_HPP

#include <cstddef>
#include <functional>
#include <span>

#include "itnas/tensor.hpp"

namespace itnas::ad {

struct FiniteDiffOptions {
    double step = 1e-5;
    // 0 checks every coordinate; otherwise at most this many evenly spaced ones per tensor.
    std::size_t max_coords_per_param = 0;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of the scalar objective against central
// differences. Error per coordinate is |analytic - numeric| / max(1, |numeric|).
// The objective must be deterministic: a repeated evaluation at the base point
// that differs bitwise raises NumericError. Resets the active tape.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& objective,
                                   std::span<Tensor> params,
                                   const FiniteDiffOptions& options = {});

} // namespace itnas::ad

#endif // ITNAS_GRADCHECK_HPP
