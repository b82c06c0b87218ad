#ifndef ITNAS_GENOTYPE_HPP
#define ITNAS_GENOTYPE_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "itnas/topology.hpp"

namespace itnas {

struct GenotypeEntry {
    int source = 0;
    std::string op;

    bool operator==(const GenotypeEntry&) const = default;
};

// nodes[k] holds the two retained in-edges of intermediate node k + 2, sorted
// by source.
struct CellGenotype {
    std::vector<std::array<GenotypeEntry, 2>> nodes;

    bool operator==(const CellGenotype&) const = default;
};

struct Provenance {
    std::uint64_t seed = 0;
    std::string config_digest;

    bool operator==(const Provenance&) const = default;
};

struct Genotype {
    CellGenotype normal;
    CellGenotype reduction;
    std::vector<std::string> op_set;
    Provenance provenance;

    const CellGenotype& cell(CellKind kind) const {
        return kind == CellKind::Normal ? normal : reduction;
    }

    bool operator==(const Genotype&) const = default;
};

} // namespace itnas

#endif // ITNAS_GENOTYPE_HPP
