#include "itnas/topology.hpp"

#include <algorithm>
#include <stdexcept>

namespace itnas {

std::string EdgeId::to_string() const {
    return "(" + std::to_string(src) + "," + std::to_string(dst) + ")";
}

std::string_view cell_kind_name(CellKind kind) {
    return kind == CellKind::Normal ? "normal" : "reduction";
}

namespace {

std::vector<EdgeId> fully_connected(int inputs, int intermediates) {
    std::vector<EdgeId> edges;
    for (int j = inputs; j < inputs + intermediates; ++j) {
        for (int i = 0; i < j; ++i) {
            edges.push_back({i, j});
        }
    }
    return edges;
}

} // namespace

CellTopology::CellTopology(int intermediates)
    : CellTopology(2, intermediates, fully_connected(2, intermediates)) {}

CellTopology::CellTopology(int inputs, int intermediates, std::vector<EdgeId> edges)
    : inputs_(inputs), intermediates_(intermediates), edges_(std::move(edges)) {
    if (inputs < 1 || intermediates < 1) {
        throw std::invalid_argument("cell needs at least one input and one intermediate node");
    }
    std::sort(edges_.begin(), edges_.end());
    if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end()) {
        throw std::invalid_argument("duplicate edge in cell topology");
    }
    for (const EdgeId& e : edges_) {
        if (e.src < 0 || e.src >= e.dst || e.dst < inputs_ || e.dst >= output_node()) {
            throw std::invalid_argument("invalid edge " + e.to_string());
        }
        (is_outer(e) ? outer_ : inner_).push_back(e);
    }
    preds_.resize(edges_.size());
    for (std::size_t k = 0; k < edges_.size(); ++k) {
        const EdgeId e = edges_[k];
        if (is_outer(e)) {
            continue;
        }
        for (const EdgeId& p : edges_) {
            if (p.dst == e.src) {
                preds_[k].push_back(p);
            }
        }
        if (preds_[k].empty()) {
            throw std::invalid_argument("inner edge " + e.to_string() + " has no predecessor");
        }
    }
}

bool CellTopology::contains(EdgeId e) const {
    return std::binary_search(edges_.begin(), edges_.end(), e);
}

std::size_t CellTopology::edge_index(EdgeId e) const {
    auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
    if (it == edges_.end() || *it != e) {
        throw std::out_of_range("edge " + e.to_string() + " not in topology");
    }
    return static_cast<std::size_t>(it - edges_.begin());
}

std::size_t CellTopology::outer_index(EdgeId e) const {
    auto it = std::lower_bound(outer_.begin(), outer_.end(), e);
    if (it == outer_.end() || *it != e) {
        throw std::out_of_range("edge " + e.to_string() + " is not an outer edge");
    }
    return static_cast<std::size_t>(it - outer_.begin());
}

std::size_t CellTopology::inner_index(EdgeId e) const {
    auto it = std::lower_bound(inner_.begin(), inner_.end(), e);
    if (it == inner_.end() || *it != e) {
        throw std::out_of_range("edge " + e.to_string() + " is not an inner edge");
    }
    return static_cast<std::size_t>(it - inner_.begin());
}

std::span<const EdgeId> CellTopology::predecessors(EdgeId e) const {
    return preds_[edge_index(e)];
}

std::vector<EdgeId> CellTopology::successors_of_node(int node) const {
    std::vector<EdgeId> out;
    for (const EdgeId& e : edges_) {
        if (e.src == node) {
            out.push_back(e);
        }
    }
    return out;
}

std::vector<EdgeId> CellTopology::incoming(int node) const {
    std::vector<EdgeId> out;
    for (const EdgeId& e : edges_) {
        if (e.dst == node) {
            out.push_back(e);
        }
    }
    return out;
}

std::size_t CellTopology::transition_pair_count() const {
    std::size_t n = 0;
    for (const EdgeId& e : inner_) {
        n += predecessors(e).size();
    }
    return n;
}

std::vector<EdgeId> topological_edge_order(const CellTopology& topology) {
    // Predecessors of (i,j) end at i < j, so (dst, src) order is already topological.
    return {topology.edges().begin(), topology.edges().end()};
}

bool is_topological_order(const CellTopology& topology, std::span<const EdgeId> order) {
    if (order.size() != topology.edges().size()) {
        return false;
    }
    std::vector<bool> seen(order.size(), false);
    for (const EdgeId& e : order) {
        if (!topology.contains(e)) {
            return false;
        }
        const std::size_t idx = topology.edge_index(e);
        if (seen[idx]) {
            return false;
        }
        for (const EdgeId& p : topology.predecessors(e)) {
            if (!seen[topology.edge_index(p)]) {
                return false;
            }
        }
        seen[idx] = true;
    }
    return true;
}

namespace {

const std::vector<OpDescriptor>& registry() {
    static const std::vector<OpDescriptor> ops = {
        {"sep_conv_3x3", OpKind::SepConv, 3, 1}, {"sep_conv_5x5", OpKind::SepConv, 5, 1},
        {"dil_conv_3x3", OpKind::DilConv, 3, 2}, {"dil_conv_5x5", OpKind::DilConv, 5, 2},
        {"avg_pool_3x3", OpKind::AvgPool, 3, 1}, {"max_pool_3x3", OpKind::MaxPool, 3, 1},
        {"identity", OpKind::Identity, 1, 1},
    };
    return ops;
}

} // namespace

OperationSet OperationSet::darts_default() {
    OperationSet set;
    set.ops_ = registry();
    return set;
}

std::optional<OpDescriptor> OperationSet::lookup(const std::string& name) {
    for (const OpDescriptor& op : registry()) {
        if (op.name == name) {
            return op;
        }
    }
    return std::nullopt;
}

std::vector<std::string> OperationSet::known_names() {
    return darts_default().names();
}

OperationSet OperationSet::from_names(const std::vector<std::string>& names) {
    if (names.size() < 2) {
        throw std::invalid_argument("operation set needs at least two candidates");
    }
    OperationSet set;
    for (const std::string& name : names) {
        auto op = lookup(name);
        if (!op) {
            throw std::invalid_argument("unknown operation '" + name + "'");
        }
        if (set.index_of(name)) {
            throw std::invalid_argument("duplicate operation '" + name + "'");
        }
        set.ops_.push_back(*op);
    }
    return set;
}

std::vector<std::string> OperationSet::names() const {
    std::vector<std::string> out;
    for (const OpDescriptor& op : ops_) {
        out.push_back(op.name);
    }
    return out;
}

std::optional<std::size_t> OperationSet::index_of(const std::string& name) const {
    for (std::size_t k = 0; k < ops_.size(); ++k) {
        if (ops_[k].name == name) {
            return k;
        }
    }
    return std::nullopt;
}

} // namespace itnas
