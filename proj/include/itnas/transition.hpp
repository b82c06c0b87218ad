#ifndef ITNAS_TRANSITION_HPP
#define ITNAS_TRANSITION_HPP

// Inter-layer transition: inner-edge operation distributions are derived from
// the distributions of their predecessor edges.
//
//   Z(i,j) = sum_m beta(m,i,j) * transit(P(m,i,j), Z(m,i))
//
// where transit(P, z)_t = sum_s z_s * P[s][t] (row s is the distribution over
// successor operations given predecessor operation s). P is a row-wise softmax
// of free logits and beta a (masked) softmax over the predecessors, so both
// constraints hold exactly at every optimizer step.

#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "itnas/tensor.hpp"
#include "itnas/topology.hpp"

namespace itnas {

// Architecture parameters for one cell kind, aligned with a CellTopology.
struct CellArchParams {
    std::vector<ad::Tensor> outer_logits;                    // per outer edge, [K]
    std::vector<std::vector<ad::Tensor>> transition_logits;  // per inner edge, per predecessor, [K,K]
    std::vector<ad::Tensor> attention_logits;                // per inner edge, [#predecessors]

    // Entries drawn from N(0, stddev^2); stddev == 0 gives zeros.
    static CellArchParams init(const CellTopology& topology, std::size_t num_ops,
                               std::mt19937_64& rng, double stddev);

    std::vector<ad::Tensor> tensors() const;
    CellArchParams clone() const;
};

struct ArchParams {
    std::size_t num_ops = 0;
    CellArchParams normal;
    CellArchParams reduction;

    static ArchParams init(const CellTopology& topology, std::size_t num_ops,
                           std::mt19937_64& rng, double stddev = 1e-3);

    const CellArchParams& cell(CellKind kind) const {
        return kind == CellKind::Normal ? normal : reduction;
    }
    CellArchParams& cell(CellKind kind) { return kind == CellKind::Normal ? normal : reduction; }

    // normal cell first, then reduction; each in outer, transition, attention order.
    std::vector<ad::Tensor> tensors() const;
    void set_requires_grad(bool flag);
    ArchParams clone() const;
};

using EdgeWeightMap = std::map<EdgeId, ad::Tensor>;
// Active-predecessor mask per inner edge; missing entries mean "all active".
using PredecessorMasks = std::map<EdgeId, std::vector<bool>>;

namespace transition {

// Row-wise softmax of [K,K] logits.
ad::Tensor materialize_matrix(const ad::Tensor& logits);

// Softmax over active predecessors; inactive entries are exactly 0.
ad::Tensor materialize_attention(const ad::Tensor& logits, const std::vector<bool>& active);

// z_out[t] = sum_s z_in[s] * P[s][t]
ad::Tensor transit(const ad::Tensor& matrix, const ad::Tensor& z_in);

// Derives every inner-edge weight from the outer weights. `order` must be a
// valid topological edge order (defaults to topological_edge_order).
EdgeWeightMap derive_inner_weights(const EdgeWeightMap& outer_z, const CellArchParams& params,
                                   const CellTopology& topology,
                                   const PredecessorMasks& masks = {},
                                   std::span<const EdgeId> order = {});

// Weight of one inner edge given the current weights of its predecessors.
ad::Tensor derive_edge(EdgeId edge, const EdgeWeightMap& current, const CellArchParams& params,
                       const CellTopology& topology, const std::vector<bool>& active);

struct ParamCount {
    std::size_t matrices = 0;
    std::size_t attention_scores = 0;
    std::size_t logits = 0; // matrices * K^2 + attention_scores
};

ParamCount count_params(const CellTopology& topology, std::size_t num_ops);

} // namespace transition

} // namespace itnas

#endif // ITNAS_TRANSITION_HPP
