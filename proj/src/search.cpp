#include "itnas/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "itnas/error.hpp"
#include "itnas/ops.hpp"

namespace itnas::search {

namespace {

void require_positive(double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string("search.") + field + " must be positive");
    }
}

void check_finite(double loss, const char* what, std::size_t step) {
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite " << what << " loss (" << loss << ") at step " << step;
        throw NumericError(os.str());
    }
}

std::vector<std::vector<double>> zero_buffers(const std::vector<ad::Tensor>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const ad::Tensor& p : params) {
        out.emplace_back(p.numel(), 0.0);
    }
    return out;
}

void zero_grads(std::vector<ad::Tensor>& params) {
    for (ad::Tensor& p : params) {
        p.zero_grad();
    }
}

// Restores requires_grad on a set of leaves when leaving scope.
class GradFlagsGuard {
public:
    explicit GradFlagsGuard(std::vector<ad::Tensor> tensors) : tensors_(std::move(tensors)) {
        for (const ad::Tensor& t : tensors_) {
            flags_.push_back(t.requires_grad());
        }
    }
    ~GradFlagsGuard() {
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            tensors_[i].zero_grad();
            tensors_[i].set_requires_grad(flags_[i]);
        }
    }
    GradFlagsGuard(const GradFlagsGuard&) = delete;
    GradFlagsGuard& operator=(const GradFlagsGuard&) = delete;

private:
    std::vector<ad::Tensor> tensors_;
    std::vector<bool> flags_;
};

} // namespace

void SearchConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("search.epochs must be >= 1");
    }
    if (batch_size < 1) {
        throw ConfigError("search.batch_size must be >= 1");
    }
    require_positive(weight_lr_start, "weight_lr_start");
    require_positive(weight_lr_end, "weight_lr_end");
    require_positive(arch_lr, "arch_lr");
    require_positive(arch_weight_decay, "arch_weight_decay");
    require_positive(arch_eps, "arch_eps");
    require_positive(tau_start, "tau_start");
    require_positive(tau_end, "tau_end");
    if (weight_momentum < 0.0 || weight_momentum >= 1.0) {
        throw ConfigError("search.weight_momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) {
        throw ConfigError("search.weight_decay must be non-negative");
    }
    if (arch_beta1 < 0.0 || arch_beta1 >= 1.0 || arch_beta2 < 0.0 || arch_beta2 >= 1.0) {
        throw ConfigError("search.arch_beta1 and arch_beta2 must be in [0, 1)");
    }
    if (arch_init_std < 0.0) {
        throw ConfigError("search.arch_init_std must be non-negative");
    }
}

relax::TemperatureSchedule SearchConfig::temperature() const {
    return relax::TemperatureSchedule{tau_start, tau_end, std::max<std::size_t>(1, epochs - 1)};
}

double cosine_lr(double start, double end, std::size_t epoch, std::size_t epochs) {
    if (epochs == 0 || epoch >= epochs) {
        throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(epochs) + ")");
    }
    if (epoch == 0) {
        return start;
    }
    if (epoch == epochs - 1) {
        return end;
    }
    const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * t));
}

GumbelNoise GumbelNoise::draw(std::mt19937_64& rng, const CellTopology& topology,
                              std::size_t num_ops) {
    GumbelNoise n;
    for (auto* cell : {&n.normal, &n.reduction}) {
        for (std::size_t k = 0; k < topology.outer().size(); ++k) {
            cell->push_back(relax::gumbel_noise(rng, num_ops));
        }
    }
    return n;
}

GumbelNoise GumbelNoise::zero(const CellTopology& topology, std::size_t num_ops) {
    GumbelNoise n;
    n.normal.assign(topology.outer().size(), std::vector<double>(num_ops, 0.0));
    n.reduction = n.normal;
    return n;
}

ArchWeights relaxed_weights(const ArchParams& arch, const CellTopology& topology, double tau,
                            const GumbelNoise& noise) {
    ArchWeights out;
    for (CellKind kind : {CellKind::Normal, CellKind::Reduction}) {
        const CellArchParams& p = arch.cell(kind);
        const auto& eps = noise.cell(kind);
        if (eps.size() != topology.outer().size()) {
            throw std::invalid_argument("noise does not cover every outer edge");
        }
        EdgeWeightMap outer;
        for (std::size_t k = 0; k < topology.outer().size(); ++k) {
            outer.emplace(topology.outer()[k], relax::concrete_sample(p.outer_logits[k], eps[k], tau));
        }
        EdgeWeightMap all = transition::derive_inner_weights(outer, p, topology);
        all.insert(outer.begin(), outer.end());
        (kind == CellKind::Normal ? out.normal : out.reduction) = std::move(all);
    }
    return out;
}

ad::Tensor batch_loss(const Network& net, const ArchWeights& weights, const data::Batch& batch) {
    return ad::nll_loss(net.forward(batch.images, &weights), batch.labels);
}

std::pair<data::Dataset, data::Dataset> split_train_val(const data::Dataset& dataset,
                                                        std::uint64_t seed) {
    if (dataset.size() < 2) {
        throw std::invalid_argument("split_train_val needs at least two samples");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = dataset.size() / 2;
    const std::span<const std::size_t> all(order);
    return {dataset.subset(all.subspan(0, half)), dataset.subset(all.subspan(half, half))};
}

SearchState SearchState::create(const SuperNetConfig& net_config, const SearchConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    Network net = Network::supernet(net_config, rng());
    ArchParams arch = ArchParams::init(net.topology(), net_config.op_set.size(), rng,
                                       config.arch_init_std);
    SearchState s{std::move(net), std::move(arch), {}, {}, {}, 0, 0, std::move(rng)};
    s.momentum = zero_buffers(s.net.parameters());
    s.adam_m = zero_buffers(s.arch.tensors());
    s.adam_v = s.adam_m;
    return s;
}

// PyTorch-style SGD: buf = m * buf + (g + wd * p); p -= lr * buf.
void sgd_update(std::vector<ad::Tensor>& params, std::vector<std::vector<double>>& buffers,
                double lr, double momentum, double weight_decay) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Tensor& p = params[i];
        const bool has = p.has_grad();
        const auto g = p.grad();
        std::vector<double>& buf = buffers[i];
        // mutable_values requires an unrecorded leaf; the tape is reset before updates.
        auto v = p.mutable_values();
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double grad = (has ? g[k] : 0.0) + weight_decay * v[k];
            buf[k] = momentum * buf[k] + grad;
            v[k] -= lr * buf[k];
        }
    }
}

// AdamW: decoupled decay, then the bias-corrected moment update.
void adamw_update(std::vector<ad::Tensor>& params, std::vector<std::vector<double>>& first,
                  std::vector<std::vector<double>>& second, std::size_t step,
                  const SearchConfig& config) {
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(config.arch_beta1, t);
    const double c2 = 1.0 - std::pow(config.arch_beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Tensor& p = params[i];
        const bool has = p.has_grad();
        const auto g = p.grad();
        auto v = p.mutable_values();
        std::vector<double>& m = first[i];
        std::vector<double>& s = second[i];
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double grad = has ? g[k] : 0.0;
            v[k] *= 1.0 - config.arch_lr * config.arch_weight_decay;
            m[k] = config.arch_beta1 * m[k] + (1.0 - config.arch_beta1) * grad;
            s[k] = config.arch_beta2 * s[k] + (1.0 - config.arch_beta2) * grad * grad;
            v[k] -= config.arch_lr * (m[k] / c1) / (std::sqrt(s[k] / c2) + config.arch_eps);
        }
    }
}

double weight_step(SearchState& state, const data::Batch& batch, double lr, double tau,
                   const SearchConfig& config) {
    ad::Tape& tape = ad::Tape::active();
    tape.reset();
    state.arch.set_requires_grad(false);
    state.net.set_requires_grad(true);
    std::vector<ad::Tensor> params = state.net.parameters();
    zero_grads(params);

    const GumbelNoise noise =
        GumbelNoise::draw(state.rng, state.net.topology(), state.arch.num_ops);
    const ArchWeights weights = relaxed_weights(state.arch, state.net.topology(), tau, noise);
    const ad::Tensor loss = batch_loss(state.net, weights, batch);
    const double value = loss.item();
    check_finite(value, "training", state.weight_steps);
    ad::backward(loss);
    tape.reset();

    sgd_update(params, state.momentum, lr, config.weight_momentum, config.weight_decay);
    zero_grads(params);
    state.arch.set_requires_grad(true);
    ++state.weight_steps;
    return value;
}

double arch_step(SearchState& state, const data::Batch& batch, double tau,
                 const SearchConfig& config) {
    ad::Tape& tape = ad::Tape::active();
    tape.reset();
    state.net.set_requires_grad(false);
    state.arch.set_requires_grad(true);
    std::vector<ad::Tensor> params = state.arch.tensors();
    zero_grads(params);

    const GumbelNoise noise =
        GumbelNoise::draw(state.rng, state.net.topology(), state.arch.num_ops);
    const ArchWeights weights = relaxed_weights(state.arch, state.net.topology(), tau, noise);
    const ad::Tensor loss = batch_loss(state.net, weights, batch);
    const double value = loss.item();
    check_finite(value, "validation", state.arch_steps);
    ad::backward(loss);
    tape.reset();

    ++state.arch_steps;
    adamw_update(params, state.adam_m, state.adam_v, state.arch_steps, config);
    zero_grads(params);
    state.net.set_requires_grad(true);
    return value;
}

SearchResult run_search(const SuperNetConfig& net_config, const SearchConfig& config,
                        const data::Dataset& dataset, const StepCallback& on_step,
                        std::size_t max_steps) {
    config.validate();
    net_config.validate();
    if (dataset.channels != net_config.input_channels || dataset.height != net_config.input_height ||
        dataset.width != net_config.input_width) {
        throw ConfigError("dataset image shape does not match the supernet input");
    }
    auto [train, val] = split_train_val(dataset, config.seed);
    SearchResult result{SearchState::create(net_config, config), {}};
    SearchState& state = result.state;
    const relax::TemperatureSchedule schedule = config.temperature();
    std::size_t paired = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double tau = relax::temperature_at(schedule, std::min(epoch, schedule.total_steps));
        const double lr =
            cosine_lr(config.weight_lr_start, config.weight_lr_end, epoch, config.epochs);
        const auto train_batches = data::batches(train.size(), config.batch_size, config.seed, epoch);
        const auto val_batches =
            data::batches(val.size(), config.batch_size, config.seed ^ 0x9e3779b97f4a7c15ULL, epoch);
        const std::size_t steps = std::min(train_batches.size(), val_batches.size());

        HistoryRecord rec{epoch + 1, tau, 0.0, 0.0};
        std::size_t done = 0;
        for (std::size_t b = 0; b < steps; ++b) {
            const double tl = weight_step(state, train.batch(train_batches[b]), lr, tau, config);
            if (on_step) {
                on_step(state, StepKind::Weight, epoch, tl);
            }
            const double vl = arch_step(state, val.batch(val_batches[b]), tau, config);
            if (on_step) {
                on_step(state, StepKind::Arch, epoch, vl);
            }
            rec.train_loss += tl;
            rec.val_loss += vl;
            ++done;
            if (max_steps && ++paired >= max_steps) {
                break;
            }
        }
        rec.train_loss /= static_cast<double>(done);
        rec.val_loss /= static_cast<double>(done);
        result.history.push_back(rec);
        if (max_steps && paired >= max_steps) {
            break;
        }
    }
    return result;
}

std::string format_history(const std::vector<HistoryRecord>& history) {
    std::string out;
    char line[160];
    for (const HistoryRecord& r : history) {
        std::snprintf(line, sizeof line, "%zu %.17g %.17g %.17g\n", r.epoch, r.tau, r.train_loss,
                      r.val_loss);
        out += line;
    }
    return out;
}

GradientProbeReport gradient_probe(const Network& net, const ArchParams& arch,
                                   const data::Batch& batch, double tau,
                                   std::uint64_t noise_seed, CellKind kind,
                                   std::size_t outer_edge_index) {
    const CellTopology& topology = net.topology();
    if (outer_edge_index >= topology.outer().size()) {
        throw std::out_of_range("gradient_probe: outer edge index out of range");
    }
    GradFlagsGuard net_flags(net.parameters());
    for (ad::Tensor t : net.parameters()) {
        t.set_requires_grad(false);
    }
    std::mt19937_64 rng(noise_seed);
    const GumbelNoise noise = GumbelNoise::draw(rng, topology, arch.num_ops);
    ad::Tape& tape = ad::Tape::active();
    GradientProbeReport report;

    // Pass 1: full autodiff with respect to the logits a = log(alpha).
    ArchParams probe = arch.clone();
    probe.set_requires_grad(false);
    ad::Tensor logits = probe.cell(kind).outer_logits[outer_edge_index];
    logits.set_requires_grad(true);
    tape.reset();
    {
        const ad::Tensor loss = batch_loss(net, relaxed_weights(probe, topology, tau, noise), batch);
        ad::backward(loss);
    }
    tape.reset();
    const auto a = logits.values();
    for (std::size_t k = 0; k < a.size(); ++k) {
        report.autodiff.push_back(logits.grad()[k] / std::exp(a[k]));
    }

    // Pass 2: dL/dz for the sampled weight held as a leaf.
    logits.set_requires_grad(false);
    ArchWeights weights = relaxed_weights(probe, topology, tau, noise);
    const EdgeId edge = topology.outer()[outer_edge_index];
    EdgeWeightMap& cell_weights = kind == CellKind::Normal ? weights.normal : weights.reduction;
    const ad::Tensor z(cell_weights.at(edge).shape(),
                       {cell_weights.at(edge).values().begin(), cell_weights.at(edge).values().end()},
                       true);
    EdgeWeightMap outer;
    for (const EdgeId& e : topology.outer()) {
        outer.emplace(e, e == edge ? z : cell_weights.at(e));
    }
    cell_weights = transition::derive_inner_weights(outer, probe.cell(kind), topology);
    cell_weights.insert(outer.begin(), outer.end());
    tape.reset();
    {
        const ad::Tensor loss = batch_loss(net, weights, batch);
        ad::backward(loss);
    }
    tape.reset();
    const auto zv = z.values();
    const auto g = z.grad();
    report.k0 = relax::argmax(zv);
    const std::size_t k0 = report.k0;
    for (std::size_t k = 0; k < zv.size(); ++k) {
        const double delta = k == k0 ? 1.0 : 0.0;
        report.closed_form.push_back(g[k0] * (delta - zv[k0]) * zv[k] / (tau * std::exp(a[k])));
        report.max_abs_deviation = std::max(report.max_abs_deviation,
                                            std::abs(report.closed_form[k] - report.autodiff[k]));
    }
    return report;
}

void RetrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) {
        throw ConfigError("eval.epochs and eval.batch_size must be >= 1");
    }
    require_positive(lr_start, "lr_start");
    require_positive(lr_end, "lr_end");
    if (momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0) {
        throw ConfigError("eval.momentum must be in [0, 1) and eval.weight_decay non-negative");
    }
}

double accuracy(const Network& net, const data::Dataset& dataset, std::size_t batch_size) {
    if (dataset.size() == 0) {
        throw std::invalid_argument("accuracy of an empty dataset");
    }
    ad::NoGradGuard no_grad;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) {
            idx.push_back(i);
        }
        const data::Batch b = dataset.batch(idx);
        const ad::Tensor logp = net.forward(b.images, nullptr);
        const std::size_t classes = logp.dim(1);
        for (std::size_t n = 0; n < idx.size(); ++n) {
            const std::size_t pred = relax::argmax(logp.values().subspan(n * classes, classes));
            correct += static_cast<int>(pred) == b.labels[n] ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RetrainReport retrain(const SuperNetConfig& net_config, const Genotype& genotype,
                      const data::Dataset& train, const data::Dataset& val,
                      const RetrainConfig& config) {
    config.validate();
    Network net = Network::discrete(net_config, genotype, config.seed);
    std::vector<ad::Tensor> params = net.parameters();
    std::vector<std::vector<double>> momentum = zero_buffers(params);
    ad::Tape& tape = ad::Tape::active();
    RetrainReport report;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(config.lr_start, config.lr_end, epoch, config.epochs);
        double total = 0.0;
        const auto order = data::batches(train.size(), config.batch_size, config.seed, epoch);
        for (const auto& idx : order) {
            tape.reset();
            zero_grads(params);
            const data::Batch b = train.batch(idx);
            const ad::Tensor loss = ad::nll_loss(net.forward(b.images, nullptr), b.labels);
            const double value = loss.item();
            check_finite(value, "retraining", step++);
            ad::backward(loss);
            tape.reset();
            sgd_update(params, momentum, lr, config.momentum, config.weight_decay);
            total += value;
        }
        report.epoch_losses.push_back(total / static_cast<double>(order.size()));
    }
    zero_grads(params);
    report.train_acc = accuracy(net, train, config.batch_size);
    report.val_acc = accuracy(net, val, config.batch_size);
    return report;
}

} // namespace itnas::search
