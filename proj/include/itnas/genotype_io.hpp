#ifndef ITNAS_GENOTYPE_IO_HPP
#define ITNAS_GENOTYPE_IO_HPP

// File formats.
//
// Genotype (.genotype.json): canonical JSON (sorted keys, two-space indent,
// trailing newline) with a schema_version field, so equal genotypes serialize
// to identical bytes.
//
// Checkpoint (.ckpt): a text manifest followed by raw little-endian float64
// payload, in manifest order:
//
//   itnas-checkpoint 1
//   kind <kind>
//   meta <key> <value...>          (zero or more)
//   tensor <name> <rank> <d0> ...  (zero or more)
//   payload <byte count>
//   <binary>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "itnas/genotype.hpp"
#include "itnas/supernet.hpp"
#include "itnas/transition.hpp"

namespace itnas::io {

inline constexpr int kGenotypeSchemaVersion = 1;

std::string serialize_genotype(const Genotype& genotype);

// Parses and validates; throws FormatError listing every problem.
Genotype parse_genotype(std::string_view text);

struct ValidationIssue {
    std::string location;
    std::string message;
};

// Structural checks on a genotype document: schema version, four nodes of two
// entries per cell, sources below the target and distinct, known operations.
std::vector<ValidationIssue> validate_document(std::string_view text);
std::vector<ValidationIssue> validate(const Genotype& genotype);

// One digraph with nodes c_{k-2}, c_{k-1}, 0..3, c_{k}.
std::string to_dot(const CellGenotype& cell, CellKind kind);

// 64-bit FNV-1a over bytes, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string genotype_digest(const Genotype& genotype);

struct CheckpointTensor {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;

    bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
    std::string kind;
    std::map<std::string, std::string> meta;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const;
    bool operator==(const Checkpoint&) const = default;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// kind "arch"; meta carries num_ops and op_set plus anything in `meta`.
Checkpoint arch_to_checkpoint(const ArchParams& arch, const CellTopology& topology,
                              const OperationSet& op_set,
                              const std::map<std::string, std::string>& meta = {});
ArchParams arch_from_checkpoint(const Checkpoint& ckpt, const CellTopology& topology);
OperationSet op_set_from_checkpoint(const Checkpoint& ckpt);

// kind "weights"; tensors named as in Network::named_parameters.
Checkpoint weights_to_checkpoint(const Network& net,
                                 const std::map<std::string, std::string>& meta = {});
// Copies values into the network's tensors; names and shapes must match exactly.
void load_weights(const Checkpoint& ckpt, Network& net);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

} // namespace itnas::io

#endif // ITNAS_GENOTYPE_IO_HPP
