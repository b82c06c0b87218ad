#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "itnas/ops.hpp"
#include "itnas/relaxation.hpp"
#include "itnas/topology.hpp"
#include "itnas/transition.hpp"

using namespace itnas;
using ad::Tensor;

namespace {

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor identity_logits(std::size_t k, double diag) {
    std::vector<double> v(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        v[i * k + i] = diag;
    }
    return Tensor({k, k}, v);
}

} // namespace

// cell-topology

TEST(Topology, CanonicalCounts) {
    const auto t = CellTopology::canonical();
    EXPECT_EQ(t.edges().size(), 14u);
    EXPECT_EQ(t.outer().size(), 8u);
    EXPECT_EQ(t.inner().size(), 6u);
    EXPECT_EQ(t.transition_pair_count(), 16u);
}

TEST(Topology, PredecessorsOfEdge34) {
    const auto t = CellTopology::canonical();
    const auto preds = t.predecessors({3, 4});
    const std::vector<EdgeId> expect = {{0, 3}, {1, 3}, {2, 3}};
    EXPECT_EQ(std::vector<EdgeId>(preds.begin(), preds.end()), expect);
    EXPECT_TRUE(t.predecessors({0, 4}).empty());
}

TEST(Topology, InnerEdgesInCanonicalOrder) {
    const auto t = CellTopology::canonical();
    const std::vector<EdgeId> expect = {{2, 3}, {2, 4}, {3, 4}, {2, 5}, {3, 5}, {4, 5}};
    EXPECT_EQ(std::vector<EdgeId>(t.inner().begin(), t.inner().end()), expect);
}

TEST(Topology, TopologicalOrderRespectsPredecessors) {
    const auto t = CellTopology::canonical();
    const auto order = topological_edge_order(t);
    ASSERT_EQ(order.size(), 14u);
    EXPECT_TRUE(is_topological_order(t, order));
    auto pos = [&](EdgeId e) { return std::find(order.begin(), order.end(), e) - order.begin(); };
    EXPECT_GT(pos({2, 3}), pos({0, 2}));
    EXPECT_GT(pos({2, 3}), pos({1, 2}));
    EXPECT_GT(pos({4, 5}), pos({3, 4}));

    auto bad = order;
    std::swap(bad.front(), bad.back());
    EXPECT_FALSE(is_topological_order(t, bad));
}

TEST(Topology, RejectsBackwardEdges) {
    EXPECT_ANY_THROW(CellTopology(2, 2, {{3, 2}}));
    EXPECT_ANY_THROW(CellTopology(2, 2, {{0, 1}}));
}

TEST(Topology, DefaultOperationSet) {
    const auto ops = OperationSet::darts_default();
    ASSERT_EQ(ops.size(), 7u);
    EXPECT_EQ(ops[0].name, "sep_conv_3x3");
    EXPECT_EQ(ops[6].name, "identity");
    EXPECT_EQ(ops.index_of("max_pool_3x3"), 5u);
    EXPECT_FALSE(OperationSet::lookup("zero").has_value());
}

// relaxation

TEST(Relaxation, GumbelFromUniform) {
    EXPECT_NEAR(relax::gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15);
    EXPECT_NEAR(relax::gumbel_from_uniform(std::exp(-std::exp(1.0))), -1.0, 1e-14);
    EXPECT_TRUE(std::isfinite(relax::gumbel_from_uniform(0.0)));
    EXPECT_TRUE(std::isfinite(relax::gumbel_from_uniform(1.0)));
}

TEST(Relaxation, ConcreteSampleExamples) {
    const std::vector<double> zero(3, 0.0);
    for (double tau : {0.1, 1.0, 7.0}) {
        const Tensor z = relax::concrete_sample(Tensor::vector({0.4, 0.4, 0.4}), zero, tau);
        for (double v : z.values()) {
            EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
        }
    }
    const auto z = to_vec(relax::concrete_sample(Tensor::vector({0, 0, std::log(2.0)}), zero, 0.5));
    EXPECT_NEAR(z[0], 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(z[1], 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(z[2], 4.0 / 6.0, 1e-15);

    // tau = 1, G = 0 recovers alpha / sum(alpha).
    const std::vector<double> a = {0.3, -1.2, 2.0};
    const auto zz = to_vec(relax::concrete_sample(Tensor::vector(a), zero, 1.0));
    const double total = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(zz[k], std::exp(a[k]) / total, 1e-15);
    }
}

TEST(Relaxation, TemperatureSchedule) {
    const relax::TemperatureSchedule s{5.0, 0.5, 10};
    EXPECT_EQ(relax::temperature_at(s, 0), 5.0);
    EXPECT_EQ(relax::temperature_at(s, 10), 0.5);
    EXPECT_DOUBLE_EQ(relax::temperature_at(s, 5), 2.75);
    for (std::size_t i = 1; i <= 10; ++i) {
        EXPECT_LT(relax::temperature_at(s, i), relax::temperature_at(s, i - 1));
    }
}

TEST(Relaxation, HardOneHot) {
    EXPECT_EQ(relax::hard_one_hot(std::vector<double>{0.1, 0.7, 0.2}),
              (std::vector<double>{0, 1, 0}));
    EXPECT_EQ(relax::hard_one_hot(std::vector<double>{0.5, 0.5}), (std::vector<double>{1, 0}));
    const std::vector<double> one = {0, 0, 1, 0};
    EXPECT_EQ(relax::hard_one_hot(one), one);
}

// Property: samples stay on the simplex for every temperature.
TEST(Relaxation, SamplesStayOnSimplex) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(7);
        for (double& x : a) {
            x = n(rng);
        }
        const auto g = relax::gumbel_noise(rng, 7);
        const double tau = 0.05 + 0.05 * trial;
        const auto z = to_vec(relax::concrete_sample(Tensor::vector(a), g, tau));
        EXPECT_TRUE(relax::on_simplex(z, 1e-12));
    }
}

// Property: as tau shrinks, argmax frequencies approach alpha_k / sum(alpha).
TEST(Relaxation, LowTemperatureFrequenciesMatchAlpha) {
    const std::vector<double> a = {std::log(0.5), std::log(0.3), std::log(0.2)};
    std::mt19937_64 rng(8);
    std::vector<double> count(3, 0.0);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const auto z = to_vec(relax::concrete_sample(Tensor::vector(a), relax::gumbel_noise(rng, 3), 0.05));
        count[relax::argmax(z)] += 1.0;
    }
    EXPECT_NEAR(count[0] / draws, 0.5, 0.02);
    EXPECT_NEAR(count[1] / draws, 0.3, 0.02);
    EXPECT_NEAR(count[2] / draws, 0.2, 0.02);
}

// transition

TEST(Transition, MaterializeMatrixExamples) {
    const auto uniform = to_vec(transition::materialize_matrix(Tensor::zeros({4, 4})));
    for (double v : uniform) {
        EXPECT_NEAR(v, 0.25, 1e-15);
    }
    const auto ident = to_vec(transition::materialize_matrix(identity_logits(5, 40.0)));
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_NEAR(ident[i * 5 + j], i == j ? 1.0 : 0.0, 1e-9);
        }
    }
}

TEST(Transition, AttentionExamples) {
    EXPECT_EQ(to_vec(transition::materialize_attention(Tensor::vector({0, 0}), {true, true})),
              (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(to_vec(transition::materialize_attention(Tensor::vector({1, 2}), {true, false})),
              (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(to_vec(transition::materialize_attention(Tensor::vector({0, 0, 0}), {true, false, true})),
              (std::vector<double>{0.5, 0.0, 0.5}));
}

TEST(Transition, TransitExamples) {
    const Tensor p({2, 2}, {0.2, 0.8, 0.6, 0.4});
    const auto z = to_vec(transition::transit(p, Tensor::vector({0.5, 0.5})));
    EXPECT_NEAR(z[0], 0.4, 1e-15);
    EXPECT_NEAR(z[1], 0.6, 1e-15);
    EXPECT_EQ(to_vec(transition::transit(p, Tensor::vector({0, 1}))), (std::vector<double>{0.6, 0.4}));
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    EXPECT_EQ(to_vec(transition::transit(eye, Tensor::vector({0.3, 0.7}))),
              (std::vector<double>{0.3, 0.7}));
}

TEST(Transition, CountParams) {
    const auto c = transition::count_params(CellTopology::canonical(), 7);
    EXPECT_EQ(c.matrices, 16u);
    EXPECT_EQ(c.attention_scores, 16u);
    EXPECT_EQ(c.logits, 800u);
}

TEST(Transition, IdentityMatricesAverageThePredecessors) {
    const auto t = CellTopology::canonical();
    std::mt19937_64 rng(0);
    auto params = CellArchParams::init(t, 3, rng, 0.0);
    for (auto& per_edge : params.transition_logits) {
        for (auto& m : per_edge) {
            m = identity_logits(3, 60.0);
        }
    }
    EdgeWeightMap outer;
    outer[{0, 2}] = Tensor::vector({1, 0, 0});
    outer[{1, 2}] = Tensor::vector({0, 0.5, 0.5});
    for (EdgeId e : t.outer()) {
        if (!outer.count(e)) {
            outer[e] = Tensor::vector({0.2, 0.3, 0.5});
        }
    }
    const auto inner = transition::derive_inner_weights(outer, params, t);
    const auto z23 = to_vec(inner.at({2, 3}));
    EXPECT_NEAR(z23[0], 0.5, 1e-12);
    EXPECT_NEAR(z23[1], 0.25, 1e-12);
    EXPECT_NEAR(z23[2], 0.25, 1e-12);
}

TEST(Transition, SinglePredecessorIsPureTransit) {
    const CellTopology t(1, 2, {{0, 1}, {1, 2}});
    std::mt19937_64 rng(4);
    const auto params = CellArchParams::init(t, 3, rng, 1.0);
    EdgeWeightMap outer;
    outer[{0, 1}] = Tensor::vector({0.1, 0.6, 0.3});
    const auto inner = transition::derive_inner_weights(outer, params, t);
    const Tensor p = transition::materialize_matrix(params.transition_logits[0][0]);
    EXPECT_EQ(to_vec(inner.at({1, 2})), to_vec(transition::transit(p, outer.at({0, 1}))));
}

// Brute-force oracle: step through the inner edges in canonical order with
// explicit softmaxes and loops, reading only the raw logits.
TEST(Transition, DerivationMatchesStepwiseOracle) {
    const auto t = CellTopology::canonical();
    const std::size_t k = 3;
    std::mt19937_64 rng(17);
    const auto params = CellArchParams::init(t, k, rng, 1.0);
    std::map<EdgeId, std::vector<double>> z;
    EdgeWeightMap outer;
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (EdgeId e : t.outer()) {
        std::vector<double> v(k);
        double s = 0.0;
        for (double& x : v) {
            x = u(rng);
            s += x;
        }
        for (double& x : v) {
            x /= s;
        }
        z[e] = v;
        outer[e] = Tensor::vector(v);
    }
    auto softmax = [](std::vector<double> v) {
        double m = *std::max_element(v.begin(), v.end());
        double s = 0.0;
        for (double& x : v) {
            x = std::exp(x - m);
            s += x;
        }
        for (double& x : v) {
            x /= s;
        }
        return v;
    };
    const std::vector<EdgeId> inner = {{2, 3}, {2, 4}, {3, 4}, {2, 5}, {3, 5}, {4, 5}};
    for (std::size_t idx = 0; idx < inner.size(); ++idx) {
        const EdgeId e = inner[idx];
        const std::size_t ii = t.inner_index(e);
        const auto raw_beta = params.attention_logits[ii].values();
        const auto beta = softmax({raw_beta.begin(), raw_beta.end()});
        std::vector<double> out(k, 0.0);
        for (int m = 0; m < e.src; ++m) {
            const auto logits = params.transition_logits[ii][static_cast<std::size_t>(m)].values();
            const auto& zin = z.at({m, e.src});
            for (std::size_t s = 0; s < k; ++s) {
                const auto row = softmax({logits.begin() + static_cast<long>(s * k),
                                          logits.begin() + static_cast<long>((s + 1) * k)});
                for (std::size_t tt = 0; tt < k; ++tt) {
                    out[tt] += beta[static_cast<std::size_t>(m)] * zin[s] * row[tt];
                }
            }
        }
        z[e] = out;
    }
    const auto derived = transition::derive_inner_weights(outer, params, t);
    for (EdgeId e : inner) {
        const auto got = to_vec(derived.at(e));
        for (std::size_t i = 0; i < k; ++i) {
            EXPECT_NEAR(got[i], z.at(e)[i], 1e-14) << e.to_string();
        }
    }
}

// Property: derived inner weights stay on the simplex, and any topological
// order gives the same result.
TEST(Transition, DerivedWeightsAreOrderIndependentSimplexVectors) {
    const auto t = CellTopology::canonical();
    const std::vector<EdgeId> alt = {{0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}, {0, 5}, {1, 5},
                                     {2, 5}, {0, 4}, {1, 4}, {2, 4}, {3, 4}, {3, 5}, {4, 5}};
    ASSERT_TRUE(is_topological_order(t, alt));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const auto params = CellArchParams::init(t, 5, rng, 2.0);
        EdgeWeightMap outer;
        for (EdgeId e : t.outer()) {
            std::vector<double> g(5);
            for (double& x : g) {
                x = std::normal_distribution<double>(0, 1)(rng);
            }
            outer[e] = ad::softmax(Tensor::vector(g));
        }
        const auto a = transition::derive_inner_weights(outer, params, t);
        const auto b = transition::derive_inner_weights(outer, params, t, {}, alt);
        for (EdgeId e : t.inner()) {
            EXPECT_TRUE(relax::on_simplex(to_vec(a.at(e)), 1e-12));
            const auto va = to_vec(a.at(e));
            const auto vb = to_vec(b.at(e));
            for (std::size_t i = 0; i < va.size(); ++i) {
                EXPECT_NEAR(va[i], vb[i], 1e-15);
            }
        }
    }
}
