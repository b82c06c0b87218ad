#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "itnas/acceptance/instances.hpp"
#include "itnas/error.hpp"
#include "itnas/genotype_io.hpp"
#include "itnas/pruning.hpp"

using namespace itnas;
using ad::Tensor;

namespace {

Genotype sample_genotype() {
    Genotype g;
    g.normal.nodes = {{GenotypeEntry{0, "sep_conv_3x3"}, GenotypeEntry{1, "identity"}},
                      {GenotypeEntry{0, "max_pool_3x3"}, GenotypeEntry{2, "dil_conv_3x3"}},
                      {GenotypeEntry{1, "sep_conv_5x5"}, GenotypeEntry{3, "avg_pool_3x3"}},
                      {GenotypeEntry{2, "identity"}, GenotypeEntry{4, "dil_conv_5x5"}}};
    g.reduction.nodes = {{GenotypeEntry{0, "max_pool_3x3"}, GenotypeEntry{1, "max_pool_3x3"}},
                         {GenotypeEntry{1, "identity"}, GenotypeEntry{2, "sep_conv_3x3"}},
                         {GenotypeEntry{0, "avg_pool_3x3"}, GenotypeEntry{3, "identity"}},
                         {GenotypeEntry{3, "sep_conv_5x5"}, GenotypeEntry{4, "dil_conv_3x3"}}};
    g.op_set = OperationSet::darts_default().names();
    g.provenance = {17, "0123456789abcdef"};
    return g;
}

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
    const auto at = s.find(from);
    EXPECT_NE(at, std::string::npos) << from;
    return s.replace(at, from.size(), to);
}

} // namespace

// pruning

TEST(Pruning, EdgeImportance) {
    EXPECT_EQ(pruning::edge_importance(std::vector<double>{0.1, 0.7, 0.2}), 0.7);
    EXPECT_EQ(pruning::edge_importance(std::vector<double>{0, 1, 0}), 1.0);
    EXPECT_EQ(pruning::edge_importance(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.25);
}

TEST(Pruning, PruneSelectTakesMinimumThenHigherSource) {
    const EdgeId e0{0, 4}, e1{1, 4}, e2{2, 4};
    EXPECT_EQ(pruning::prune_select({{e0, 0.9}, {e1, 0.5}, {e2, 0.4}}), e2);
    EXPECT_EQ(pruning::prune_select({{e0, 0.5}, {e1, 0.5}, {e2, 0.5}}), e2);
    EXPECT_EQ(pruning::prune_select({{e0, 0.3}, {e1, 0.3}, {e2, 0.5}}), e1);
    EXPECT_ANY_THROW(pruning::prune_select({{e0, 0.3}, {e1, 0.3}}));
}

TEST(Pruning, HardPruneKeepsTopTwoWithLowSourceTies) {
    const auto t = CellTopology::canonical();
    pruning::NumericWeights z;
    for (EdgeId e : t.edges()) {
        z[e] = {0.5, 0.5};
    }
    z[{1, 3}] = {0.5, 0.5};
    z[{2, 3}] = {0.6, 0.4};
    z[{0, 3}] = {0.1, 0.9};
    const auto ops = OperationSet::from_names({"identity", "max_pool_3x3"});
    const auto cell = pruning::darts_hard_prune(z, t, ops);
    EXPECT_EQ(cell.nodes[1][0], (GenotypeEntry{0, "max_pool_3x3"}));
    EXPECT_EQ(cell.nodes[1][1], (GenotypeEntry{2, "identity"}));
    // Node 5: all importances tie at 0.5.
    EXPECT_EQ(cell.nodes[3][0].source, 0);
    EXPECT_EQ(cell.nodes[3][1].source, 1);
}

TEST(Pruning, IdentityTransitionsFallToTieBreaking) {
    const auto t = CellTopology::canonical();
    const std::size_t k = 4;
    std::mt19937_64 rng(0);
    auto params = CellArchParams::init(t, k, rng, 0.0);
    for (auto& per_edge : params.transition_logits) {
        for (auto& m : per_edge) {
            std::vector<double> v(k * k, 0.0);
            for (std::size_t i = 0; i < k; ++i) {
                v[i * k + i] = 80.0;
            }
            m = Tensor({k, k}, v);
        }
    }
    pruning::NumericWeights outer;
    for (EdgeId e : t.outer()) {
        outer[e] = {0, 0, 1, 0};
    }
    const auto ops = acceptance::op_subset(k);
    const auto result = pruning::tiep(outer, params, t, ops);
    for (const auto& [edge, z] : result.state.current_z) {
        EXPECT_NEAR(z[2], 1.0, 1e-12) << edge.to_string();
    }
    for (const auto& node : result.cell.nodes) {
        EXPECT_EQ(node[0], (GenotypeEntry{0, ops[2].name}));
        EXPECT_EQ(node[1], (GenotypeEntry{1, ops[2].name}));
    }
}

TEST(Pruning, EventCountsPerNode) {
    const auto inst = acceptance::make_instance(3, 7);
    const auto r = pruning::tiep(inst.outer_z, inst.params, CellTopology::canonical(),
                                 acceptance::op_subset(7));
    std::map<int, int> per_node;
    for (const auto& ev : r.events) {
        ++per_node[ev.pruned.dst];
    }
    EXPECT_EQ(per_node[2], 0);
    EXPECT_EQ(per_node[3], 1);
    EXPECT_EQ(per_node[4], 2);
    EXPECT_EQ(per_node[5], 3);
}

// Independent straight-line oracle over seeded instances.
TEST(Pruning, TiepMatchesReferenceOracle) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto inst = acceptance::make_instance(7000 + s, 3);
        const auto ops = acceptance::op_subset(3);
        const auto got = pruning::tiep(inst.outer_z, inst.params, CellTopology::canonical(), ops);
        EXPECT_EQ(got.cell, acceptance::reference_tiep(inst, ops)) << "seed " << 7000 + s;
    }
}

// Property: batch top-2 selection after re-derivation equals single-edge
// iterative pruning.
TEST(Pruning, BatchSelectionEqualsIterative) {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto inst = acceptance::make_instance(9000 + s, 5);
        const auto ops = acceptance::op_subset(5);
        const auto t = CellTopology::canonical();
        EXPECT_EQ(pruning::tiep(inst.outer_z, inst.params, t, ops).cell,
                  pruning::tiep(inst.outer_z, inst.params, t, ops, pruning::Strategy::BatchTop2).cell);
    }
}

// Property: hard pruning depends only on the order of the weights, so any
// strictly increasing transform leaves the genotype unchanged.
TEST(Pruning, HardPruneInvariantUnderMonotoneTransforms) {
    const auto t = CellTopology::canonical();
    const auto ops = acceptance::op_subset(7);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto inst = acceptance::make_instance(s, 7);
        auto all = inst.outer_z;
        for (auto& [e, z] : pruning::derive_numeric(inst.outer_z, inst.params, t)) {
            all[e] = z;
        }
        auto warped = all;
        for (auto& [e, z] : warped) {
            for (double& v : z) {
                v = std::exp(3.0 * v) + 2.0;
            }
        }
        EXPECT_EQ(pruning::darts_hard_prune(all, t, ops), pruning::darts_hard_prune(warped, t, ops));
    }
}

TEST(Pruning, DivergenceFixture) {
    const auto inst = acceptance::make_instance(acceptance::kDivergenceSeed, 7);
    const auto t = CellTopology::canonical();
    const auto ops = acceptance::op_subset(7);
    auto all = inst.outer_z;
    for (auto& [e, z] : pruning::derive_numeric(inst.outer_z, inst.params, t)) {
        all[e] = z;
    }
    EXPECT_NE(pruning::tiep(inst.outer_z, inst.params, t, ops).cell,
              pruning::darts_hard_prune(all, t, ops));
}

TEST(Pruning, DerivedGenotypeValidates) {
    std::mt19937_64 rng(5);
    const auto arch = ArchParams::init(CellTopology::canonical(), 7, rng, 1.0);
    for (auto strategy : {pruning::Strategy::Tiep, pruning::Strategy::Hard, pruning::Strategy::BatchTop2}) {
        const auto g = pruning::derive_genotype(arch, CellTopology::canonical(),
                                                OperationSet::darts_default(), strategy, {});
        EXPECT_TRUE(io::validate(g).empty());
        EXPECT_EQ(g.normal.nodes[0][0].source, 0);
        EXPECT_EQ(g.normal.nodes[0][1].source, 1);
    }
}

// genotype-io

TEST(GenotypeIo, RoundTripAndStableBytes) {
    const auto g = sample_genotype();
    const auto text = io::serialize_genotype(g);
    EXPECT_EQ(io::serialize_genotype(g), text);
    EXPECT_EQ(io::parse_genotype(text), g);
    EXPECT_EQ(io::serialize_genotype(io::parse_genotype(text)), text);
    EXPECT_EQ(text.back(), '\n');
}

TEST(GenotypeIo, OneOpChangesTheDocument) {
    auto g = sample_genotype();
    const auto before = io::serialize_genotype(g);
    g.reduction.nodes[2][1].op = "max_pool_3x3";
    EXPECT_NE(io::serialize_genotype(g), before);
    EXPECT_NE(io::genotype_digest(g), io::genotype_digest(sample_genotype()));
}

TEST(GenotypeIo, ValidationNamesTheEdge) {
    const auto text = io::serialize_genotype(sample_genotype());
    // Node 3 of the normal cell lists source 2; make it a self-loop.
    auto bad = io::serialize_genotype([] {
        auto g = sample_genotype();
        g.normal.nodes[1][1].source = 3;
        return g;
    }());
    const auto issues = io::validate_document(bad);
    ASSERT_FALSE(issues.empty());
    EXPECT_NE(issues[0].message.find("(3,3)"), std::string::npos) << issues[0].message;
    EXPECT_THROW(io::parse_genotype(bad), FormatError);
    EXPECT_TRUE(io::validate_document(text).empty());
}

TEST(GenotypeIo, ValidationNamesTheUnknownOp) {
    const auto bad = replace_once(io::serialize_genotype(sample_genotype()), "\"dil_conv_5x5\"",
                                  "\"conv_9x9\"");
    bool found = false;
    for (const auto& issue : io::validate_document(bad)) {
        found = found || issue.message.find("conv_9x9") != std::string::npos;
    }
    EXPECT_TRUE(found);
}

TEST(GenotypeIo, RejectsMalformedDocuments) {
    EXPECT_THROW(io::parse_genotype("{"), FormatError);
    EXPECT_THROW(io::parse_genotype("[]"), FormatError);
    const auto text = io::serialize_genotype(sample_genotype());
    EXPECT_THROW(io::parse_genotype(replace_once(text, "\"schema_version\": 1", "\"schema_version\": 9")),
                 FormatError);
}

TEST(GenotypeIo, DotHasSevenNodesAndTwelveEdges) {
    const auto g = sample_genotype();
    const auto dot = io::to_dot(g.normal, CellKind::Normal);
    EXPECT_EQ(dot, io::to_dot(g.normal, CellKind::Normal));
    std::size_t edges = 0;
    for (std::size_t at = dot.find("->"); at != std::string::npos; at = dot.find("->", at + 2)) {
        ++edges;
    }
    EXPECT_EQ(edges, 12u);
    for (const char* node : {"c_{k-2}", "c_{k-1}", "\"0\"", "\"1\"", "\"2\"", "\"3\"", "c_{k}"}) {
        EXPECT_NE(dot.find(node), std::string::npos) << node;
    }
    EXPECT_NE(dot.find("digraph normal"), std::string::npos);
    EXPECT_NE(io::to_dot(g.reduction, CellKind::Reduction).find("digraph reduction"),
              std::string::npos);
}

TEST(GenotypeIo, Fnv1a) {
    EXPECT_EQ(io::fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(io::fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Checkpoint, ArchRoundTrip) {
    const auto t = CellTopology::canonical();
    std::mt19937_64 rng(12);
    const auto arch = ArchParams::init(t, 7, rng, 1.0);
    const auto ckpt = io::arch_to_checkpoint(arch, t, OperationSet::darts_default(), {{"seed", "12"}});
    std::stringstream buf;
    io::write_checkpoint(buf, ckpt);
    const auto back = io::read_checkpoint(buf);
    EXPECT_EQ(back, ckpt);
    EXPECT_EQ(back.meta.at("seed"), "12");
    EXPECT_EQ(io::op_set_from_checkpoint(back), OperationSet::darts_default());
    const auto restored = io::arch_from_checkpoint(back, t);
    const auto a = arch.tensors(), b = restored.tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_TRUE(std::equal(a[i].values().begin(), a[i].values().end(), b[i].values().begin()));
    }
    EXPECT_NE(ckpt.find("normal.transition.0_2_3"), nullptr);
    EXPECT_NE(ckpt.find("reduction.attention.4_5"), nullptr);
}

TEST(Checkpoint, TruncationAndTrailingBytesAreErrors) {
    const auto t = CellTopology::canonical();
    std::mt19937_64 rng(1);
    std::stringstream buf;
    io::write_checkpoint(buf, io::arch_to_checkpoint(ArchParams::init(t, 3, rng), t, acceptance::op_subset(3)));
    const std::string bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 5));
    EXPECT_THROW(io::read_checkpoint(cut), FormatError);
    std::stringstream extra(bytes + "x");
    EXPECT_THROW(io::read_checkpoint(extra), FormatError);
    std::stringstream junk("not a checkpoint\n");
    EXPECT_THROW(io::read_checkpoint(junk), FormatError);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
    const auto t = CellTopology::canonical();
    std::mt19937_64 rng(1);
    auto ckpt = io::arch_to_checkpoint(ArchParams::init(t, 3, rng), t, acceptance::op_subset(3));
    ckpt.tensors.pop_back();
    EXPECT_THROW(io::arch_from_checkpoint(ckpt, t), FormatError);
}

TEST(Checkpoint, WeightsRoundTrip) {
    const auto cfg = SuperNetConfig::toy();
    const Network a = Network::supernet(cfg, 1);
    Network b = Network::supernet(cfg, 2);
    io::load_weights(io::weights_to_checkpoint(a), b);
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_TRUE(std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin()));
    }
}
