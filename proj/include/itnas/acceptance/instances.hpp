#ifndef ITNAS_ACCEPTANCE_INSTANCES_HPP
#define ITNAS_ACCEPTANCE_INSTANCES_HPP

// Seeded random pruning instances and a straight-line reference
// implementation of the iterative pruning algorithm that works on plain
// vectors only. The reference shares no code with the pruning or transition
// modules; it reads the parameter tensors as numbers.

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "itnas/genotype.hpp"
#include "itnas/pruning.hpp"
#include "itnas/topology.hpp"
#include "itnas/transition.hpp"

namespace itnas::acceptance {

struct PruneInstance {
    std::size_t num_ops = 0;
    pruning::NumericWeights outer_z; // softmax of N(0, 2^2) logits per outer edge
    CellArchParams params;           // entries N(0, 1)
};

PruneInstance make_instance(std::uint64_t seed, std::size_t num_ops);

// First `num_ops` operations of the default set.
OperationSet op_subset(std::size_t num_ops);

// Canonical 4-node cell only.
CellGenotype reference_tiep(const PruneInstance& instance, const OperationSet& op_set);

// Seed of a K = 7 instance on which TIEP and hard pruning disagree.
inline constexpr std::uint64_t kDivergenceSeed = 0;

} // namespace itnas::acceptance

#endif // ITNAS_ACCEPTANCE_INSTANCES_HPP
