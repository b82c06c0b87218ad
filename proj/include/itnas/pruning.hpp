#ifndef ITNAS_PRUNING_HPP
#define ITNAS_PRUNING_HPP

// Turning searched architecture parameters into a discrete genotype.
//
// Transition-induced iterative edge pruning (TIEP) walks the intermediate nodes
// in ascending order. Node 2 keeps both of its edges. For every later node j
// the incoming inner edges are re-derived from the already one-hot retained
// predecessors, with attention renormalized over the surviving predecessors;
// then the weakest incoming edge (smallest max(Z)) is pruned until two remain,
// and the survivors are converted to one-hot. Pruning an edge (r, j) masks it
// out of the attention of every inner edge leaving node j.
//
// The hard-prune baseline keeps, in one shot, the two incoming edges of every
// node with the largest max(Z), using the inner weights from the initial
// derivation.
//
// Tie rules: retained edges prefer lower source indices, pruning removes the
// higher source index, and operation argmax prefers the lower operation index.

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "itnas/genotype.hpp"
#include "itnas/relaxation.hpp"
#include "itnas/topology.hpp"
#include "itnas/transition.hpp"

namespace itnas::pruning {

using NumericWeights = std::map<EdgeId, relax::EdgeWeight>;

enum class Strategy {
    Tiep,      // single-edge pruning, re-deriving between prunes
    BatchTop2, // TIEP with one-shot top-2 selection per node
    Hard,      // baseline without transition-induced updates
};

double edge_importance(std::span<const double> z);

// Incoming edge with minimal importance; ties prune the higher source index.
// Requires at least three candidates.
EdgeId prune_select(const std::vector<std::pair<EdgeId, double>>& importances);

struct AttentionSnapshot {
    EdgeId inner;
    std::vector<EdgeId> predecessors;
    std::vector<double> beta;
};

struct PruneEvent {
    EdgeId pruned;
    std::vector<AttentionSnapshot> renormalized; // every inner edge fed by the pruned edge's target
};

struct PruneState {
    std::map<int, std::vector<EdgeId>> retained; // node -> retained in-edges
    NumericWeights current_z;
    PredecessorMasks active_pred;
};

struct TiepResult {
    CellGenotype cell;
    PruneState state;
    std::vector<PruneEvent> events;
};

// `outer_z` must hold a simplex vector for every outer edge.
TiepResult tiep(const NumericWeights& outer_z, const CellArchParams& params,
                const CellTopology& topology, const OperationSet& op_set,
                Strategy strategy = Strategy::Tiep);

// `all_z` must hold every edge of the topology.
CellGenotype darts_hard_prune(const NumericWeights& all_z, const CellTopology& topology,
                              const OperationSet& op_set);

// Outer weights in their deterministic mode: softmax(a) (zero noise, tau = 1).
NumericWeights mode_outer_weights(const CellArchParams& params, const CellTopology& topology);

// Inner weights from the initial derivation, as plain vectors.
NumericWeights derive_numeric(const NumericWeights& outer_z, const CellArchParams& params,
                              const CellTopology& topology);

// Both cell kinds with the chosen strategy.
Genotype derive_genotype(const ArchParams& arch, const CellTopology& topology,
                         const OperationSet& op_set, Strategy strategy,
                         const Provenance& provenance);

} // namespace itnas::pruning

#endif // ITNAS_PRUNING_HPP
