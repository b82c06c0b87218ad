#include "itnas/pruning.hpp"

#include <algorithm>
#include <stdexcept>

#include "itnas/ops.hpp"

namespace itnas::pruning {

namespace {

ad::Tensor as_tensor(const relax::EdgeWeight& z) { return ad::Tensor::vector(z); }

relax::EdgeWeight as_vector(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

EdgeWeightMap to_tensors(const NumericWeights& w) {
    EdgeWeightMap out;
    for (const auto& [e, z] : w) {
        out.emplace(e, as_tensor(z));
    }
    return out;
}

// Orders edges by importance (desc) then source (asc): the first two are kept.
std::vector<EdgeId> rank_edges(const std::vector<EdgeId>& edges, const NumericWeights& z) {
    std::vector<EdgeId> ranked = edges;
    std::stable_sort(ranked.begin(), ranked.end(), [&](const EdgeId& a, const EdgeId& b) {
        const double ia = edge_importance(z.at(a));
        const double ib = edge_importance(z.at(b));
        if (ia != ib) {
            return ia > ib;
        }
        return a.src < b.src;
    });
    return ranked;
}

std::array<GenotypeEntry, 2> node_entries(std::vector<EdgeId> kept, const NumericWeights& z,
                                          const OperationSet& op_set) {
    if (kept.size() != 2) {
        throw std::invalid_argument("node must retain exactly two edges");
    }
    std::sort(kept.begin(), kept.end(),
              [](const EdgeId& a, const EdgeId& b) { return a.src < b.src; });
    std::array<GenotypeEntry, 2> out;
    for (std::size_t k = 0; k < 2; ++k) {
        const relax::EdgeWeight& w = z.at(kept[k]);
        if (w.size() != op_set.size()) {
            throw std::invalid_argument("edge weight length does not match the operation set");
        }
        out[k] = GenotypeEntry{kept[k].src, op_set[relax::argmax(w)].name};
    }
    return out;
}

} // namespace

double edge_importance(std::span<const double> z) {
    if (z.empty()) {
        throw std::invalid_argument("edge_importance of empty weight");
    }
    return *std::max_element(z.begin(), z.end());
}

EdgeId prune_select(const std::vector<std::pair<EdgeId, double>>& importances) {
    if (importances.size() < 3) {
        throw std::invalid_argument("prune_select needs at least three incoming edges");
    }
    auto worst = importances.begin();
    for (auto it = importances.begin() + 1; it != importances.end(); ++it) {
        if (it->second < worst->second ||
            (it->second == worst->second && it->first.src > worst->first.src)) {
            worst = it;
        }
    }
    return worst->first;
}

NumericWeights derive_numeric(const NumericWeights& outer_z, const CellArchParams& params,
                              const CellTopology& topology) {
    ad::NoGradGuard no_grad;
    NumericWeights out;
    for (const auto& [e, z] : transition::derive_inner_weights(to_tensors(outer_z), params,
                                                               topology)) {
        out.emplace(e, as_vector(z));
    }
    return out;
}

TiepResult tiep(const NumericWeights& outer_z, const CellArchParams& params,
                const CellTopology& topology, const OperationSet& op_set, Strategy strategy) {
    if (strategy == Strategy::Hard) {
        throw std::invalid_argument("tiep: use darts_hard_prune for the hard strategy");
    }
    ad::NoGradGuard no_grad;
    TiepResult result;
    PruneState& st = result.state;

    // Topology initialization.
    for (const EdgeId& e : topology.outer()) {
        auto it = outer_z.find(e);
        if (it == outer_z.end()) {
            throw std::invalid_argument("tiep: missing outer edge " + e.to_string());
        }
        if (it->second.size() != op_set.size()) {
            throw std::invalid_argument("tiep: weight length does not match the operation set");
        }
        st.current_z.emplace(e, it->second);
    }
    for (const auto& [e, z] : derive_numeric(outer_z, params, topology)) {
        st.current_z.emplace(e, z);
    }
    for (const EdgeId& e : topology.inner()) {
        st.active_pred.emplace(e, std::vector<bool>(topology.predecessors(e).size(), true));
    }

    auto rederive = [&](const EdgeId& e) {
        EdgeWeightMap current;
        for (const EdgeId& p : topology.predecessors(e)) {
            current.emplace(p, as_tensor(st.current_z.at(p)));
        }
        st.current_z[e] =
            as_vector(transition::derive_edge(e, current, params, topology, st.active_pred.at(e)));
    };

    auto prune = [&](const EdgeId& r) {
        PruneEvent event{r, {}};
        for (const EdgeId& succ : topology.successors_of_node(r.dst)) {
            auto preds = topology.predecessors(succ);
            auto pos = std::find(preds.begin(), preds.end(), r) - preds.begin();
            std::vector<bool>& mask = st.active_pred.at(succ);
            mask[static_cast<std::size_t>(pos)] = false;
            const ad::Tensor beta = transition::materialize_attention(
                params.attention_logits[topology.inner_index(succ)], mask);
            event.renormalized.push_back(
                AttentionSnapshot{succ, {preds.begin(), preds.end()}, as_vector(beta)});
        }
        result.events.push_back(std::move(event));
    };

    for (int j = topology.inputs(); j < topology.output_node(); ++j) {
        std::vector<EdgeId> alive = topology.incoming(j);
        for (const EdgeId& e : alive) {
            if (!topology.is_outer(e)) {
                rederive(e);
            }
        }
        if (strategy == Strategy::BatchTop2) {
            const std::vector<EdgeId> ranked = rank_edges(alive, st.current_z);
            alive.assign(ranked.begin(), ranked.begin() + std::min<std::ptrdiff_t>(2, ranked.size()));
            for (std::size_t k = 2; k < ranked.size(); ++k) {
                prune(ranked[k]);
            }
        } else {
            while (alive.size() > 2) {
                std::vector<std::pair<EdgeId, double>> scores;
                for (const EdgeId& e : alive) {
                    scores.emplace_back(e, edge_importance(st.current_z.at(e)));
                }
                const EdgeId r = prune_select(scores);
                alive.erase(std::find(alive.begin(), alive.end(), r));
                prune(r);
            }
        }
        std::sort(alive.begin(), alive.end());
        for (const EdgeId& e : alive) {
            st.current_z[e] = relax::hard_one_hot(st.current_z.at(e));
        }
        st.retained[j] = alive;
        result.cell.nodes.push_back(node_entries(alive, st.current_z, op_set));
    }
    return result;
}

CellGenotype darts_hard_prune(const NumericWeights& all_z, const CellTopology& topology,
                              const OperationSet& op_set) {
    for (const EdgeId& e : topology.edges()) {
        if (!all_z.contains(e)) {
            throw std::invalid_argument("hard prune: missing edge " + e.to_string());
        }
    }
    CellGenotype cell;
    for (int j = topology.inputs(); j < topology.output_node(); ++j) {
        std::vector<EdgeId> ranked = rank_edges(topology.incoming(j), all_z);
        ranked.resize(std::min<std::size_t>(2, ranked.size()));
        cell.nodes.push_back(node_entries(ranked, all_z, op_set));
    }
    return cell;
}

NumericWeights mode_outer_weights(const CellArchParams& params, const CellTopology& topology) {
    ad::NoGradGuard no_grad;
    NumericWeights out;
    for (std::size_t k = 0; k < topology.outer().size(); ++k) {
        out.emplace(topology.outer()[k], as_vector(ad::softmax(params.outer_logits.at(k))));
    }
    return out;
}

Genotype derive_genotype(const ArchParams& arch, const CellTopology& topology,
                         const OperationSet& op_set, Strategy strategy,
                         const Provenance& provenance) {
    Genotype g;
    g.op_set = op_set.names();
    g.provenance = provenance;
    for (CellKind kind : {CellKind::Normal, CellKind::Reduction}) {
        const CellArchParams& params = arch.cell(kind);
        const NumericWeights outer = mode_outer_weights(params, topology);
        CellGenotype cell;
        if (strategy == Strategy::Hard) {
            NumericWeights all = outer;
            for (auto& [e, z] : derive_numeric(outer, params, topology)) {
                all.emplace(e, std::move(z));
            }
            cell = darts_hard_prune(all, topology, op_set);
        } else {
            cell = tiep(outer, params, topology, op_set, strategy).cell;
        }
        (kind == CellKind::Normal ? g.normal : g.reduction) = std::move(cell);
    }
    return g;
}

} // namespace itnas::pruning
