#ifndef ITNAS_RELAXATION_HPP
#define ITNAS_RELAXATION_HPP

// Annealed Gumbel-softmax relaxation of the per-edge operation choice.
//
// Outer-edge parameters are unconstrained logits a with alpha = exp(a), so the
// concrete sample is z = softmax((a + G) / tau) with G_k = -log(-log(U_k)).

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "itnas/tensor.hpp"

namespace itnas::relax {

using EdgeWeight = std::vector<double>;

// Uniform draws are clamped into [eps, 1 - eps] so the noise stays finite.
inline constexpr double kUniformClamp = 1e-12;

double gumbel_from_uniform(double u);
std::vector<double> gumbel_noise(std::mt19937_64& rng, std::size_t count);

// softmax((logits + noise) / tau); differentiable in logits, noise is constant.
ad::Tensor concrete_sample(const ad::Tensor& logits, std::span<const double> noise, double tau);

struct TemperatureSchedule {
    double tau_start = 5.0;
    double tau_end = 0.5;
    std::size_t total_steps = 1;
};

// Linear interpolation from tau_start (step 0) to tau_end (step total_steps).
double temperature_at(const TemperatureSchedule& schedule, std::size_t step);

// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> z);
EdgeWeight hard_one_hot(std::span<const double> z);

bool on_simplex(std::span<const double> z, double tolerance);

} // namespace itnas::relax

#endif // ITNAS_RELAXATION_HPP
