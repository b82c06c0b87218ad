#ifndef ITNAS_TOPOLOGY_HPP
#define ITNAS_TOPOLOGY_HPP

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace itnas {

// Directed edge src -> dst of the cell DAG.
struct EdgeId {
    int src = 0;
    int dst = 0;

    // Canonical order: by destination, then source.
    friend constexpr std::strong_ordering operator<=>(const EdgeId& a, const EdgeId& b) {
        if (auto c = a.dst <=> b.dst; c != 0) {
            return c;
        }
        return a.src <=> b.src;
    }
    friend constexpr bool operator==(const EdgeId&, const EdgeId&) = default;

    std::string to_string() const;
};

enum class CellKind { Normal, Reduction };

std::string_view cell_kind_name(CellKind kind);

// Cell DAG: input nodes [0, inputs), intermediate nodes [inputs, inputs +
// intermediates) and one output node concatenating the intermediates.
class CellTopology {
public:
    // The 4-intermediate-node cell with two inputs: 14 edges, 8 outer, 6 inner.
    static CellTopology canonical() { return CellTopology(4); }

    // Two inputs, every intermediate node fed by every lower-indexed node.
    explicit CellTopology(int intermediates);
    // Arbitrary edge set; edges must point into intermediate nodes, from lower indices.
    CellTopology(int inputs, int intermediates, std::vector<EdgeId> edges);

    int inputs() const { return inputs_; }
    int intermediates() const { return intermediates_; }
    int node_count() const { return inputs_ + intermediates_ + 1; }
    int output_node() const { return inputs_ + intermediates_; }

    // All edges in canonical (dst, src) order.
    std::span<const EdgeId> edges() const { return edges_; }
    // Edges leaving an input node; their weights are free variables.
    std::span<const EdgeId> outer() const { return outer_; }
    // Edges leaving an intermediate node; their weights are derived.
    std::span<const EdgeId> inner() const { return inner_; }

    bool contains(EdgeId e) const;
    bool is_outer(EdgeId e) const { return e.src < inputs_; }
    std::size_t edge_index(EdgeId e) const;
    std::size_t outer_index(EdgeId e) const;
    std::size_t inner_index(EdgeId e) const;

    // Edges ending at the source node of `e`; empty for outer edges.
    std::span<const EdgeId> predecessors(EdgeId e) const;
    // Edges (j, *) fed by node j.
    std::vector<EdgeId> successors_of_node(int node) const;
    std::vector<EdgeId> incoming(int node) const;

    // Number of (predecessor, inner edge) pairs, i.e. transition matrices.
    std::size_t transition_pair_count() const;

private:
    int inputs_;
    int intermediates_;
    std::vector<EdgeId> edges_;
    std::vector<EdgeId> outer_;
    std::vector<EdgeId> inner_;
    std::vector<std::vector<EdgeId>> preds_; // indexed like edges_
};

// Edges in an order where each inner edge follows all of its predecessors.
std::vector<EdgeId> topological_edge_order(const CellTopology& topology);

// True when `order` is a permutation of the topology's edges that respects predecessors.
bool is_topological_order(const CellTopology& topology, std::span<const EdgeId> order);

enum class OpKind { SepConv, DilConv, AvgPool, MaxPool, Identity };

struct OpDescriptor {
    std::string name;
    OpKind kind = OpKind::Identity;
    int kernel = 1;
    int dilation = 1;

    bool operator==(const OpDescriptor&) const = default;
};

// Ordered candidate operations for every edge.
class OperationSet {
public:
    // sep_conv_3x3, sep_conv_5x5, dil_conv_3x3, dil_conv_5x5, avg_pool_3x3,
    // max_pool_3x3, identity
    static OperationSet darts_default();
    static OperationSet from_names(const std::vector<std::string>& names);
    static std::optional<OpDescriptor> lookup(const std::string& name);
    static std::vector<std::string> known_names();

    std::size_t size() const { return ops_.size(); }
    const OpDescriptor& operator[](std::size_t k) const { return ops_[k]; }
    std::span<const OpDescriptor> ops() const { return ops_; }
    std::vector<std::string> names() const;
    std::optional<std::size_t> index_of(const std::string& name) const;

    bool operator==(const OperationSet&) const = default;

private:
    std::vector<OpDescriptor> ops_;
};

} // namespace itnas

#endif // ITNAS_TOPOLOGY_HPP
