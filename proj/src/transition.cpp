#include "itnas/transition.hpp"

#include <algorithm>
#include <stdexcept>

#include "itnas/error.hpp"
#include "itnas/ops.hpp"

namespace itnas {

namespace {

ad::Tensor normal_tensor(ad::Shape shape, std::mt19937_64& rng, double stddev) {
    std::vector<double> v(ad::shape_numel(shape), 0.0);
    if (stddev > 0.0) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& x : v) {
            x = dist(rng);
        }
    }
    return ad::Tensor(std::move(shape), std::move(v), true);
}

ad::Tensor clone_tensor(const ad::Tensor& t) {
    ad::Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    return c;
}

} // namespace

CellArchParams CellArchParams::init(const CellTopology& topology, std::size_t num_ops,
                                    std::mt19937_64& rng, double stddev) {
    CellArchParams p;
    for (std::size_t i = 0; i < topology.outer().size(); ++i) {
        p.outer_logits.push_back(normal_tensor({num_ops}, rng, stddev));
    }
    for (const EdgeId& e : topology.inner()) {
        const std::size_t preds = topology.predecessors(e).size();
        std::vector<ad::Tensor> mats;
        for (std::size_t m = 0; m < preds; ++m) {
            mats.push_back(normal_tensor({num_ops, num_ops}, rng, stddev));
        }
        p.transition_logits.push_back(std::move(mats));
        p.attention_logits.push_back(normal_tensor({preds}, rng, stddev));
    }
    return p;
}

std::vector<ad::Tensor> CellArchParams::tensors() const {
    std::vector<ad::Tensor> out(outer_logits.begin(), outer_logits.end());
    for (const auto& mats : transition_logits) {
        out.insert(out.end(), mats.begin(), mats.end());
    }
    out.insert(out.end(), attention_logits.begin(), attention_logits.end());
    return out;
}

CellArchParams CellArchParams::clone() const {
    CellArchParams c;
    for (const auto& t : outer_logits) {
        c.outer_logits.push_back(clone_tensor(t));
    }
    for (const auto& mats : transition_logits) {
        std::vector<ad::Tensor> copy;
        for (const auto& t : mats) {
            copy.push_back(clone_tensor(t));
        }
        c.transition_logits.push_back(std::move(copy));
    }
    for (const auto& t : attention_logits) {
        c.attention_logits.push_back(clone_tensor(t));
    }
    return c;
}

ArchParams ArchParams::init(const CellTopology& topology, std::size_t num_ops,
                            std::mt19937_64& rng, double stddev) {
    ArchParams a;
    a.num_ops = num_ops;
    a.normal = CellArchParams::init(topology, num_ops, rng, stddev);
    a.reduction = CellArchParams::init(topology, num_ops, rng, stddev);
    return a;
}

std::vector<ad::Tensor> ArchParams::tensors() const {
    std::vector<ad::Tensor> out = normal.tensors();
    std::vector<ad::Tensor> red = reduction.tensors();
    out.insert(out.end(), red.begin(), red.end());
    return out;
}

void ArchParams::set_requires_grad(bool flag) {
    for (ad::Tensor& t : tensors()) {
        t.set_requires_grad(flag);
    }
}

ArchParams ArchParams::clone() const {
    ArchParams c;
    c.num_ops = num_ops;
    c.normal = normal.clone();
    c.reduction = reduction.clone();
    return c;
}

namespace transition {

ad::Tensor materialize_matrix(const ad::Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(0) != logits.dim(1)) {
        throw ShapeError("transition logits must be square, got " +
                         ad::shape_to_string(logits.shape()));
    }
    return ad::softmax(logits);
}

ad::Tensor materialize_attention(const ad::Tensor& logits, const std::vector<bool>& active) {
    if (std::none_of(active.begin(), active.end(), [](bool b) { return b; })) {
        throw std::invalid_argument("attention needs at least one active predecessor");
    }
    return ad::masked_softmax(logits, active);
}

ad::Tensor transit(const ad::Tensor& matrix, const ad::Tensor& z_in) {
    if (z_in.rank() != 1 || matrix.rank() != 2 || matrix.dim(0) != z_in.dim(0) ||
        matrix.dim(1) != z_in.dim(0)) {
        throw ShapeError("transit: matrix " + ad::shape_to_string(matrix.shape()) +
                         " with weight " + ad::shape_to_string(z_in.shape()));
    }
    const std::size_t k = z_in.dim(0);
    return ad::reshape(ad::matmul(ad::reshape(z_in, {1, k}), matrix), {k});
}

ad::Tensor derive_edge(EdgeId edge, const EdgeWeightMap& current, const CellArchParams& params,
                       const CellTopology& topology, const std::vector<bool>& active) {
    const std::size_t idx = topology.inner_index(edge);
    auto preds = topology.predecessors(edge);
    if (params.transition_logits.size() != topology.inner().size() ||
        params.transition_logits[idx].size() != preds.size() ||
        params.attention_logits[idx].numel() != preds.size() || active.size() != preds.size()) {
        throw ShapeError("transition parameters do not match topology at edge " +
                         edge.to_string());
    }
    std::vector<ad::Tensor> terms;
    terms.reserve(preds.size());
    for (std::size_t m = 0; m < preds.size(); ++m) {
        auto it = current.find(preds[m]);
        if (it == current.end()) {
            throw std::invalid_argument("weight of predecessor " + preds[m].to_string() +
                                        " of " + edge.to_string() + " not available");
        }
        terms.push_back(transit(materialize_matrix(params.transition_logits[idx][m]), it->second));
    }
    const ad::Tensor beta = materialize_attention(params.attention_logits[idx], active);
    return ad::weighted_sum(terms, beta);
}

EdgeWeightMap derive_inner_weights(const EdgeWeightMap& outer_z, const CellArchParams& params,
                                   const CellTopology& topology, const PredecessorMasks& masks,
                                   std::span<const EdgeId> order) {
    std::vector<EdgeId> default_order;
    if (order.empty()) {
        default_order = topological_edge_order(topology);
        order = default_order;
    } else if (!is_topological_order(topology, order)) {
        throw std::invalid_argument("derive_inner_weights: edge order is not topological");
    }
    EdgeWeightMap current;
    for (const EdgeId& e : topology.outer()) {
        auto it = outer_z.find(e);
        if (it == outer_z.end()) {
            throw std::invalid_argument("missing weight for outer edge " + e.to_string());
        }
        current.emplace(e, it->second);
    }
    EdgeWeightMap inner;
    for (const EdgeId& e : order) {
        if (topology.is_outer(e)) {
            continue;
        }
        auto mask_it = masks.find(e);
        const std::vector<bool> active =
            mask_it != masks.end() ? mask_it->second
                                   : std::vector<bool>(topology.predecessors(e).size(), true);
        ad::Tensor z = derive_edge(e, current, params, topology, active);
        current.emplace(e, z);
        inner.emplace(e, std::move(z));
    }
    return inner;
}

ParamCount count_params(const CellTopology& topology, std::size_t num_ops) {
    ParamCount c;
    c.matrices = topology.transition_pair_count();
    c.attention_scores = c.matrices;
    c.logits = c.matrices * num_ops * num_ops + c.attention_scores;
    return c;
}

} // namespace transition

} // namespace itnas
