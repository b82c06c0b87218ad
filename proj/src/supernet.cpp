#include "itnas/supernet.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "itnas/error.hpp"
#include "itnas/ops.hpp"

namespace itnas {

namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), i.e. Kaiming-uniform with a = sqrt(5).
ad::Tensor kaiming_uniform(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::shape_numel(shape));
    for (double& x : v) {
        x = dist(rng);
    }
    return ad::Tensor(std::move(shape), std::move(v), true);
}

ad::Tensor zero_bias(std::size_t n) { return ad::Tensor::zeros({n}, true); }

ad::Tensor preprocess(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b,
                      std::size_t stride) {
    return ad::pointwise_conv2d(ad::relu(x), w, b, stride);
}

} // namespace

SuperNetConfig SuperNetConfig::toy() {
    SuperNetConfig c;
    c.num_cells = 2;
    c.reduction_positions = {2};
    c.init_channels = 8;
    c.num_classes = 4;
    c.input_channels = 3;
    c.input_height = 16;
    c.input_width = 16;
    return c;
}

bool SuperNetConfig::is_reduction(int cell_index) const {
    for (int p : reduction_positions) {
        if (p == cell_index + 1) {
            return true;
        }
    }
    return false;
}

void SuperNetConfig::validate() const {
    if (num_cells < 1) {
        throw ConfigError("supernet.num_cells must be >= 1");
    }
    if (init_channels < 1 || num_classes < 1 || input_channels < 1) {
        throw ConfigError("supernet channel and class counts must be >= 1");
    }
    std::size_t h = input_height, w = input_width;
    if (h < 1 || w < 1) {
        throw ConfigError("supernet input extents must be >= 1");
    }
    for (int p : reduction_positions) {
        if (p < 1 || p > num_cells) {
            throw ConfigError("supernet.reduction_positions entry " + std::to_string(p) +
                              " outside [1, num_cells]");
        }
    }
    for (int c = 0; c < num_cells; ++c) {
        if (is_reduction(c)) {
            if (h % 2 != 0 || w % 2 != 0) {
                throw ConfigError("reduction cell " + std::to_string(c + 1) +
                                  " needs even spatial extents");
            }
            h /= 2;
            w /= 2;
        }
    }
    if (op_set.size() < 2) {
        throw ConfigError("supernet.op_set needs at least two operations");
    }
}

CandidateOp::CandidateOp(OpDescriptor desc, std::size_t channels, std::size_t stride,
                         std::mt19937_64& rng)
    : desc_(std::move(desc)), stride_(stride) {
    const std::size_t k = static_cast<std::size_t>(desc_.kernel);
    switch (desc_.kind) {
    case OpKind::SepConv:
    case OpKind::DilConv:
        depthwise_ = kaiming_uniform({channels, k, k}, k * k, rng);
        pointwise_ = kaiming_uniform({channels, channels}, channels, rng);
        bias_ = zero_bias(channels);
        break;
    case OpKind::Identity:
        if (stride_ != 1) {
            pointwise_ = kaiming_uniform({channels, channels}, channels, rng);
            bias_ = zero_bias(channels);
        }
        break;
    case OpKind::AvgPool:
    case OpKind::MaxPool:
        break;
    }
}

bool CandidateOp::needs_relu() const {
    return desc_.kind == OpKind::SepConv || desc_.kind == OpKind::DilConv;
}

ad::Tensor CandidateOp::forward(const ad::Tensor& x, const ad::Tensor& relu_x) const {
    switch (desc_.kind) {
    case OpKind::SepConv:
    case OpKind::DilConv: {
        const std::size_t d = static_cast<std::size_t>(desc_.dilation);
        const std::size_t pad = d * static_cast<std::size_t>(desc_.kernel - 1) / 2;
        const ad::Tensor dw = ad::depthwise_conv2d(relu_x, depthwise_, {stride_, d, pad});
        return ad::pointwise_conv2d(dw, pointwise_, bias_, 1);
    }
    case OpKind::AvgPool:
        return ad::avg_pool3x3(x, stride_);
    case OpKind::MaxPool:
        return ad::max_pool3x3(x, stride_);
    case OpKind::Identity:
        if (stride_ == 1) {
            return x;
        }
        return ad::pointwise_conv2d(x, pointwise_, bias_, stride_);
    }
    throw std::logic_error("unknown operation kind");
}

void CandidateOp::append_params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    if (depthwise_.defined()) {
        out.emplace_back(prefix + ".dw", depthwise_);
    }
    if (pointwise_.defined()) {
        out.emplace_back(prefix + ".pw", pointwise_);
    }
    if (bias_.defined()) {
        out.emplace_back(prefix + ".b", bias_);
    }
}

ad::Tensor mixed_edge_forward(const ad::Tensor& input, const ad::Tensor& z,
                              std::span<const CandidateOp> ops) {
    if (z.rank() != 1 || z.numel() != ops.size()) {
        throw ShapeError("mixed edge: weight " + ad::shape_to_string(z.shape()) + " for " +
                         std::to_string(ops.size()) + " operations");
    }
    ad::Tensor relu_x;
    std::vector<ad::Tensor> outputs;
    outputs.reserve(ops.size());
    for (const CandidateOp& op : ops) {
        if (op.needs_relu() && !relu_x.defined()) {
            relu_x = ad::relu(input);
        }
        outputs.push_back(op.forward(input, relu_x));
    }
    for (const ad::Tensor& o : outputs) {
        if (o.shape() != outputs.front().shape()) {
            throw ShapeError("mixed edge: candidate outputs disagree in shape");
        }
    }
    return ad::weighted_sum(outputs, z);
}

ad::Tensor cell_forward(const ad::Tensor& node0, const ad::Tensor& node1,
                        const EdgeWeightMap* weights, const CellModule& cell,
                        const CellTopology& topology) {
    std::vector<ad::Tensor> nodes = {node0, node1};
    std::vector<ad::Tensor> intermediates;
    const int first = topology.inputs();
    for (int j = first; j < topology.output_node(); ++j) {
        ad::Tensor acc;
        for (const EdgeModule& em : cell.edges) {
            if (em.edge.dst != j) {
                continue;
            }
            const ad::Tensor& in = nodes[static_cast<std::size_t>(em.edge.src)];
            ad::Tensor out;
            if (em.ops.size() == 1 && weights == nullptr) {
                const ad::Tensor relu_x = em.ops[0].needs_relu() ? ad::relu(in) : ad::Tensor{};
                out = em.ops[0].forward(in, relu_x);
            } else {
                if (weights == nullptr) {
                    throw std::invalid_argument("mixed cell requires edge weights");
                }
                auto it = weights->find(em.edge);
                if (it == weights->end()) {
                    throw std::invalid_argument("missing weight for edge " + em.edge.to_string());
                }
                out = mixed_edge_forward(in, it->second, em.ops);
            }
            acc = acc.defined() ? ad::add(acc, out) : out;
        }
        if (!acc.defined()) {
            throw std::invalid_argument("intermediate node " + std::to_string(j) +
                                        " has no incoming edge");
        }
        nodes.push_back(acc);
        intermediates.push_back(acc);
    }
    return ad::concat_channels(intermediates);
}

Network::Network(SuperNetConfig config, std::uint64_t seed, const Genotype* genotype)
    : config_(std::move(config)), topology_(CellTopology::canonical()) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t c_stem = config_.init_channels;
    stem_dw_ = kaiming_uniform({config_.input_channels, 3, 3}, 9, rng);
    stem_pw_ = kaiming_uniform({c_stem, config_.input_channels}, config_.input_channels, rng);
    stem_b_ = zero_bias(c_stem);

    std::size_t c_pp = c_stem, c_p = c_stem, c_cur = config_.init_channels;
    bool reduce_prev = false;
    for (int c = 0; c < config_.num_cells; ++c) {
        CellModule cell;
        cell.kind = config_.is_reduction(c) ? CellKind::Reduction : CellKind::Normal;
        if (cell.kind == CellKind::Reduction) {
            c_cur *= 2;
        }
        cell.channels = c_cur;
        cell.reduce_prev = reduce_prev;
        cell.pre0_w = kaiming_uniform({c_cur, c_pp}, c_pp, rng);
        cell.pre0_b = zero_bias(c_cur);
        cell.pre1_w = kaiming_uniform({c_cur, c_p}, c_p, rng);
        cell.pre1_b = zero_bias(c_cur);

        // Selected (edge -> operation names); empty map means "everything".
        std::map<EdgeId, std::vector<std::string>> selected;
        if (genotype) {
            const CellGenotype& cg = genotype->cell(cell.kind);
            if (cg.nodes.size() != static_cast<std::size_t>(topology_.intermediates())) {
                throw std::invalid_argument("genotype node count does not match the cell");
            }
            for (std::size_t k = 0; k < cg.nodes.size(); ++k) {
                for (const GenotypeEntry& entry : cg.nodes[k]) {
                    selected[EdgeId{entry.source, static_cast<int>(k) + topology_.inputs()}]
                        .push_back(entry.op);
                }
            }
        }
        for (const EdgeId& e : topology_.edges()) {
            const std::size_t stride =
                cell.kind == CellKind::Reduction && topology_.is_outer(e) ? 2 : 1;
            EdgeModule em;
            em.edge = e;
            if (genotype) {
                auto it = selected.find(e);
                if (it == selected.end()) {
                    continue;
                }
                if (it->second.size() != 1) {
                    throw std::invalid_argument("genotype selects edge " + e.to_string() + " twice");
                }
                auto desc = OperationSet::lookup(it->second[0]);
                if (!desc) {
                    throw std::invalid_argument("unknown operation '" + it->second[0] + "'");
                }
                auto idx = config_.op_set.index_of(desc->name);
                em.op_indices.push_back(idx ? *idx : 0);
                em.ops.emplace_back(*desc, c_cur, stride, rng);
            } else {
                for (std::size_t k = 0; k < config_.op_set.size(); ++k) {
                    em.op_indices.push_back(k);
                    em.ops.emplace_back(config_.op_set[k], c_cur, stride, rng);
                }
            }
            cell.edges.push_back(std::move(em));
        }
        cells_.push_back(std::move(cell));
        reduce_prev = cells_.back().kind == CellKind::Reduction;
        c_pp = c_p;
        c_p = 4 * c_cur;
    }
    classifier_w_ = kaiming_uniform({config_.num_classes, c_p}, c_p, rng);
    classifier_b_ = zero_bias(config_.num_classes);
}

Network Network::supernet(const SuperNetConfig& config, std::uint64_t seed) {
    return Network(config, seed, nullptr);
}

Network Network::discrete(const SuperNetConfig& config, const Genotype& genotype,
                          std::uint64_t seed) {
    return Network(config, seed, &genotype);
}

Network Network::extract(const Genotype& genotype) const {
    Network out = *this;
    for (CellModule& cell : out.cells_) {
        const CellGenotype& cg = genotype.cell(cell.kind);
        std::vector<EdgeModule> kept;
        for (EdgeModule& em : cell.edges) {
            const std::size_t node = static_cast<std::size_t>(em.edge.dst - topology_.inputs());
            if (node >= cg.nodes.size()) {
                throw std::invalid_argument("genotype node count does not match the cell");
            }
            for (const GenotypeEntry& entry : cg.nodes[node]) {
                if (entry.source != em.edge.src) {
                    continue;
                }
                for (std::size_t k = 0; k < em.ops.size(); ++k) {
                    if (em.ops[k].desc().name == entry.op) {
                        kept.push_back(EdgeModule{em.edge, {em.op_indices[k]}, {em.ops[k]}});
                    }
                }
            }
        }
        cell.edges = std::move(kept);
    }
    return out;
}

ad::Tensor Network::forward(const ad::Tensor& images, const ArchWeights* arch) const {
    if (images.rank() != 4 || images.dim(1) != config_.input_channels ||
        images.dim(2) != config_.input_height || images.dim(3) != config_.input_width) {
        throw ShapeError("network input " + ad::shape_to_string(images.shape()) +
                         " does not match configuration");
    }
    const ad::Tensor stem =
        ad::pointwise_conv2d(ad::depthwise_conv2d(images, stem_dw_, {1, 1, 1}), stem_pw_, stem_b_);
    ad::Tensor s0 = stem, s1 = stem;
    for (const CellModule& cell : cells_) {
        const ad::Tensor node0 = preprocess(s0, cell.pre0_w, cell.pre0_b, cell.reduce_prev ? 2 : 1);
        const ad::Tensor node1 = preprocess(s1, cell.pre1_w, cell.pre1_b, 1);
        const EdgeWeightMap* weights = arch ? &arch->cell(cell.kind) : nullptr;
        ad::Tensor out = cell_forward(node0, node1, weights, cell, topology_);
        s0 = s1;
        s1 = std::move(out);
    }
    const ad::Tensor logits = ad::affine(ad::global_avg_pool(s1), classifier_w_, classifier_b_);
    return ad::log_softmax(logits);
}

std::vector<NamedTensor> Network::named_parameters() const {
    std::vector<NamedTensor> out;
    out.emplace_back("stem.dw", stem_dw_);
    out.emplace_back("stem.pw", stem_pw_);
    out.emplace_back("stem.b", stem_b_);
    for (std::size_t c = 0; c < cells_.size(); ++c) {
        const CellModule& cell = cells_[c];
        const std::string prefix = "cells." + std::to_string(c);
        out.emplace_back(prefix + ".pre0.w", cell.pre0_w);
        out.emplace_back(prefix + ".pre0.b", cell.pre0_b);
        out.emplace_back(prefix + ".pre1.w", cell.pre1_w);
        out.emplace_back(prefix + ".pre1.b", cell.pre1_b);
        for (const EdgeModule& em : cell.edges) {
            for (const CandidateOp& op : em.ops) {
                op.append_params(prefix + ".edge." + std::to_string(em.edge.src) + "_" +
                                     std::to_string(em.edge.dst) + "." + op.desc().name,
                                 out);
            }
        }
    }
    out.emplace_back("classifier.w", classifier_w_);
    out.emplace_back("classifier.b", classifier_b_);
    return out;
}

std::vector<ad::Tensor> Network::parameters() const {
    std::vector<ad::Tensor> out;
    for (auto& [name, t] : named_parameters()) {
        out.push_back(t);
    }
    return out;
}

void Network::set_requires_grad(bool flag) {
    for (ad::Tensor& t : parameters()) {
        t.set_requires_grad(flag);
    }
}

} // namespace itnas
