#ifndef ITNAS_SEARCH_HPP
#define ITNAS_SEARCH_HPP

// Bi-level architecture search, first-order: each paired step updates the
// network weights on a training batch (SGD with momentum, cosine learning
// rate) and then the architecture logits on a validation batch (AdamW). Every
// forward draws fresh Gumbel noise for the outer edges; inner-edge weights are
// derived through the transition matrices.
//
// Learning rate and temperature change per epoch.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "itnas/data.hpp"
#include "itnas/relaxation.hpp"
#include "itnas/supernet.hpp"
#include "itnas/transition.hpp"

namespace itnas::search {

struct SearchConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double weight_lr_start = 0.025;
    double weight_lr_end = 1e-3;
    double weight_momentum = 0.9;
    double weight_decay = 3e-4;
    double arch_lr = 3e-4;
    double arch_weight_decay = 1e-3;
    double arch_beta1 = 0.9;
    double arch_beta2 = 0.999;
    double arch_eps = 1e-8;
    double arch_init_std = 1e-3;
    double tau_start = 5.0;
    double tau_end = 0.5;
    std::uint64_t seed = 0;

    // Throws ConfigError.
    void validate() const;
    // Spans epochs - 1 steps so the last epoch runs at tau_end.
    relax::TemperatureSchedule temperature() const;
};

// start at epoch 0, end at epoch epochs - 1, half-cosine in between.
double cosine_lr(double start, double end, std::size_t epoch, std::size_t epochs);

// Per outer edge, in canonical order.
struct GumbelNoise {
    std::vector<std::vector<double>> normal;
    std::vector<std::vector<double>> reduction;

    // Normal cell first, then reduction.
    static GumbelNoise draw(std::mt19937_64& rng, const CellTopology& topology,
                            std::size_t num_ops);
    static GumbelNoise zero(const CellTopology& topology, std::size_t num_ops);

    const std::vector<std::vector<double>>& cell(CellKind kind) const {
        return kind == CellKind::Normal ? normal : reduction;
    }
};

// Outer weights from concrete samples, inner weights derived from them.
ArchWeights relaxed_weights(const ArchParams& arch, const CellTopology& topology, double tau,
                            const GumbelNoise& noise);

// Mean negative log-likelihood of the supernet on one batch.
ad::Tensor batch_loss(const Network& net, const ArchWeights& weights, const data::Batch& batch);

// Shuffled with `seed`, an odd item dropped, first half for training.
std::pair<data::Dataset, data::Dataset> split_train_val(const data::Dataset& dataset,
                                                        std::uint64_t seed);

struct SearchState {
    Network net;
    ArchParams arch;
    std::vector<std::vector<double>> momentum; // per network parameter
    std::vector<std::vector<double>> adam_m;   // per architecture tensor
    std::vector<std::vector<double>> adam_v;
    std::size_t weight_steps = 0;
    std::size_t arch_steps = 0;
    std::mt19937_64 rng;

    static SearchState create(const SuperNetConfig& net_config, const SearchConfig& config);
};

// In-place optimizer updates on unrecorded leaves; tensors without a gradient
// are treated as having a zero one.
// SGD: buf = momentum * buf + (g + weight_decay * p); p -= lr * buf.
void sgd_update(std::vector<ad::Tensor>& params, std::vector<std::vector<double>>& buffers,
                double lr, double momentum, double weight_decay);
// AdamW with the arch_* settings of `config`; `step` is 1-based.
void adamw_update(std::vector<ad::Tensor>& params, std::vector<std::vector<double>>& first,
                  std::vector<std::vector<double>>& second, std::size_t step,
                  const SearchConfig& config);

// Both throw NumericError on a non-finite loss and return the batch loss
// evaluated before the update.
double weight_step(SearchState& state, const data::Batch& batch, double lr, double tau,
                   const SearchConfig& config);
double arch_step(SearchState& state, const data::Batch& batch, double tau,
                 const SearchConfig& config);

struct HistoryRecord {
    std::size_t epoch = 0; // 1-based
    double tau = 0.0;
    double train_loss = 0.0; // mean over the epoch's weight steps
    double val_loss = 0.0;   // mean over the epoch's architecture steps
};

enum class StepKind { Weight, Arch };

// Called after every optimizer step.
using StepCallback =
    std::function<void(const SearchState&, StepKind, std::size_t epoch, double loss)>;

struct SearchResult {
    SearchState state;
    std::vector<HistoryRecord> history;
};

// Stops early once `max_steps` paired steps ran (0: no limit); the history
// then ends with the partial epoch.
SearchResult run_search(const SuperNetConfig& net_config, const SearchConfig& config,
                        const data::Dataset& dataset, const StepCallback& on_step = {},
                        std::size_t max_steps = 0);

// "epoch tau train_loss val_loss" with 17 significant digits.
std::string format_history(const std::vector<HistoryRecord>& history);

// Compares, for one outer edge, the autodiff gradient with respect to
// alpha = exp(a) against the single-term closed form
//   g[k0] * (delta(k - k0) - z[k0]) * z[k] / (tau * alpha[k])
// where k0 is the argmax of the sampled z and g = dL/dz. Informational only.
struct GradientProbeReport {
    std::size_t k0 = 0;
    std::vector<double> autodiff;
    std::vector<double> closed_form;
    double max_abs_deviation = 0.0;
};

GradientProbeReport gradient_probe(const Network& net, const ArchParams& arch,
                                   const data::Batch& batch, double tau,
                                   std::uint64_t noise_seed, CellKind kind,
                                   std::size_t outer_edge_index);

// Training a discrete network from scratch.
struct RetrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double lr_start = 0.025;
    double lr_end = 1e-3;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RetrainReport {
    std::vector<double> epoch_losses;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

double accuracy(const Network& net, const data::Dataset& dataset, std::size_t batch_size);

RetrainReport retrain(const SuperNetConfig& net_config, const Genotype& genotype,
                      const data::Dataset& train, const data::Dataset& val,
                      const RetrainConfig& config);

} // namespace itnas::search

#endif // ITNAS_SEARCH_HPP
