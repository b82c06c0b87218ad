#include "itnas/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "itnas/error.hpp"
#include "itnas/ops.hpp"

namespace itnas::relax {

double gumbel_from_uniform(double u) {
    u = std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
    return -std::log(-std::log(u));
}

std::vector<double> gumbel_noise(std::mt19937_64& rng, std::size_t count) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> out(count);
    for (double& g : out) {
        g = gumbel_from_uniform(uniform(rng));
    }
    return out;
}

ad::Tensor concrete_sample(const ad::Tensor& logits, std::span<const double> noise, double tau) {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("concrete_sample: temperature must be positive");
    }
    if (logits.rank() != 1 || logits.numel() != noise.size()) {
        throw ShapeError("concrete_sample: logits " + ad::shape_to_string(logits.shape()) +
                         " vs " + std::to_string(noise.size()) + " noise values");
    }
    const ad::Tensor g = ad::Tensor::vector({noise.begin(), noise.end()});
    return ad::softmax(ad::scale(ad::add(logits, g), 1.0 / tau));
}

double temperature_at(const TemperatureSchedule& schedule, std::size_t step) {
    if (!(schedule.tau_end > 0.0) || schedule.tau_start < schedule.tau_end) {
        throw std::invalid_argument("temperature schedule requires tau_start >= tau_end > 0");
    }
    if (schedule.total_steps == 0) {
        throw std::invalid_argument("temperature schedule needs at least one step");
    }
    if (step > schedule.total_steps) {
        throw std::out_of_range("temperature step " + std::to_string(step) + " beyond " +
                                std::to_string(schedule.total_steps));
    }
    if (step == schedule.total_steps) {
        return schedule.tau_end;
    }
    const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
    return schedule.tau_start + (schedule.tau_end - schedule.tau_start) * frac;
}

std::size_t argmax(std::span<const double> z) {
    if (z.empty()) {
        throw std::invalid_argument("argmax of empty vector");
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k) {
        if (z[k] > z[best]) {
            best = k;
        }
    }
    return best;
}

EdgeWeight hard_one_hot(std::span<const double> z) {
    EdgeWeight out(z.size(), 0.0);
    out[argmax(z)] = 1.0;
    return out;
}

bool on_simplex(std::span<const double> z, double tolerance) {
    double total = 0.0;
    for (double v : z) {
        if (!(v >= -tolerance && v <= 1.0 + tolerance)) {
            return false;
        }
        total += v;
    }
    return std::abs(total - 1.0) <= tolerance;
}

} // namespace itnas::relax
