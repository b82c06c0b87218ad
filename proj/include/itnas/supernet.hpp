#ifndef ITNAS_SUPERNET_HPP
#define ITNAS_SUPERNET_HPP

// Weight-sharing supernetwork: a stem, a stack of cells whose edges mix all
// candidate operations by their architecture weights, and a linear classifier.
//
// Candidate operations (no normalization layers):
//   sep/dil conv: relu -> depthwise kxk (stride s, dilation d) -> 1x1 conv + bias
//   avg/max pool: 3x3, padding 1, stride s
//   identity:     x, or a strided 1x1 conv + bias when s == 2
// Reduction cells apply s == 2 on edges leaving the two input nodes.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "itnas/genotype.hpp"
#include "itnas/tensor.hpp"
#include "itnas/topology.hpp"
#include "itnas/transition.hpp"

namespace itnas {

struct SuperNetConfig {
    int num_cells = 8;
    std::vector<int> reduction_positions = {3, 6}; // 1-based cell indices
    std::size_t init_channels = 16;
    std::size_t num_classes = 10;
    std::size_t input_channels = 3;
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    OperationSet op_set = OperationSet::darts_default();

    // 2 cells (reduction at 2), 8 channels, 16x16 inputs, 4 classes.
    static SuperNetConfig toy();

    bool is_reduction(int cell_index) const; // 0-based
    void validate() const;
};

using NamedTensor = std::pair<std::string, ad::Tensor>;

class CandidateOp {
public:
    CandidateOp(OpDescriptor desc, std::size_t channels, std::size_t stride, std::mt19937_64& rng);

    // relu_x must be relu(x); it is shared between the convolutions of one edge.
    ad::Tensor forward(const ad::Tensor& x, const ad::Tensor& relu_x) const;

    const OpDescriptor& desc() const { return desc_; }
    std::size_t stride() const { return stride_; }
    bool needs_relu() const;
    void append_params(const std::string& prefix, std::vector<NamedTensor>& out) const;

private:
    OpDescriptor desc_;
    std::size_t stride_;
    ad::Tensor depthwise_;
    ad::Tensor pointwise_;
    ad::Tensor bias_;
};

struct EdgeModule {
    EdgeId edge;
    std::vector<std::size_t> op_indices; // into the operation set
    std::vector<CandidateOp> ops;
};

struct CellModule {
    CellKind kind = CellKind::Normal;
    bool reduce_prev = false;
    std::size_t channels = 0;
    ad::Tensor pre0_w, pre0_b; // relu -> 1x1 conv (stride 2 when reduce_prev)
    ad::Tensor pre1_w, pre1_b;
    std::vector<EdgeModule> edges; // canonical edge order
};

// Complete per-edge weights for both cell kinds (outer and inner edges).
struct ArchWeights {
    EdgeWeightMap normal;
    EdgeWeightMap reduction;

    const EdgeWeightMap& cell(CellKind kind) const {
        return kind == CellKind::Normal ? normal : reduction;
    }
};

// sum_k z_k * o_k(input)
ad::Tensor mixed_edge_forward(const ad::Tensor& input, const ad::Tensor& z,
                              std::span<const CandidateOp> ops);

// Nodes 0 and 1 are the preprocessed inputs. Intermediate nodes are sums over
// incoming edges; the result concatenates them along channels. Edges carrying
// a single operation ignore `weights` (discrete cells may pass nullptr).
ad::Tensor cell_forward(const ad::Tensor& node0, const ad::Tensor& node1,
                        const EdgeWeightMap* weights, const CellModule& cell,
                        const CellTopology& topology);

class Network {
public:
    // Every edge carries every candidate operation.
    static Network supernet(const SuperNetConfig& config, std::uint64_t seed);
    // Only the edges and operations named by the genotype.
    static Network discrete(const SuperNetConfig& config, const Genotype& genotype,
                            std::uint64_t seed);

    // Discrete network sharing this supernet's weights for the selected operations.
    Network extract(const Genotype& genotype) const;

    // Log-probabilities [N, num_classes]. `arch` is required when edges mix
    // several operations.
    ad::Tensor forward(const ad::Tensor& images, const ArchWeights* arch) const;

    const SuperNetConfig& config() const { return config_; }
    const CellTopology& topology() const { return topology_; }
    const std::vector<CellModule>& cells() const { return cells_; }
    std::size_t classifier_features() const { return classifier_w_.dim(1); }

    std::vector<NamedTensor> named_parameters() const;
    std::vector<ad::Tensor> parameters() const;
    void set_requires_grad(bool flag);

private:
    Network(SuperNetConfig config, std::uint64_t seed, const Genotype* genotype);

    SuperNetConfig config_;
    CellTopology topology_;
    ad::Tensor stem_dw_, stem_pw_, stem_b_;
    std::vector<CellModule> cells_;
    ad::Tensor classifier_w_, classifier_b_;
};

} // namespace itnas

#endif // ITNAS_SUPERNET_HPP
