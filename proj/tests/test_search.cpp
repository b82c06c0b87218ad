#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "itnas/error.hpp"
#include "itnas/ops.hpp"
#include "itnas/search.hpp"

using namespace itnas;
using search::SearchConfig;

namespace {

// 8x8 inputs, 4 channels: small enough for many optimizer steps per test.
SuperNetConfig tiny_net() {
    auto c = SuperNetConfig::toy();
    c.init_channels = 4;
    c.input_height = 8;
    c.input_width = 8;
    return c;
}

data::Dataset tiny_data(std::size_t per_class = 4) {
    auto s = data::SyntheticSpec::easy();
    s.height = 8;
    s.width = 8;
    s.samples_per_class = per_class;
    return data::gen_synthetic(s);
}

SearchConfig tiny_search(std::size_t epochs = 2) {
    SearchConfig c;
    c.epochs = epochs;
    c.batch_size = 4;
    c.seed = 21;
    return c;
}

data::Dataset indexed(std::size_t n) {
    data::Dataset d;
    d.channels = d.height = d.width = 1;
    d.class_count = n;
    for (std::size_t i = 0; i < n; ++i) {
        d.images.push_back(static_cast<double>(i));
        d.labels.push_back(static_cast<int>(i));
    }
    return d;
}

std::vector<std::vector<double>> snapshot(const std::vector<ad::Tensor>& ts) {
    std::vector<std::vector<double>> out;
    for (const auto& t : ts) {
        out.emplace_back(t.values().begin(), t.values().end());
    }
    return out;
}

data::Batch first_batch(const data::Dataset& d, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    return d.batch(idx);
}

} // namespace

TEST(Search, SplitIsAPartition) {
    const auto [train, val] = search::split_train_val(indexed(100), 3);
    ASSERT_EQ(train.size(), 50u);
    ASSERT_EQ(val.size(), 50u);
    std::set<int> all(train.labels.begin(), train.labels.end());
    all.insert(val.labels.begin(), val.labels.end());
    EXPECT_EQ(all.size(), 100u);

    const auto again = search::split_train_val(indexed(100), 3);
    EXPECT_EQ(again.first.labels, train.labels);
    EXPECT_NE(search::split_train_val(indexed(100), 4).first.labels, train.labels);
    EXPECT_EQ(search::split_train_val(indexed(7), 1).first.size(), 3u);
}

TEST(Search, ScheduleEndpoints) {
    EXPECT_EQ(search::cosine_lr(0.025, 1e-3, 0, 50), 0.025);
    EXPECT_EQ(search::cosine_lr(0.025, 1e-3, 49, 50), 1e-3);
    EXPECT_NEAR(search::cosine_lr(0.025, 1e-3, 1, 3), 0.013, 1e-15);
    EXPECT_THROW(search::cosine_lr(0.025, 1e-3, 50, 50), std::out_of_range);
    SearchConfig c;
    const auto t = c.temperature();
    EXPECT_EQ(relax::temperature_at(t, 0), 5.0);
    EXPECT_EQ(relax::temperature_at(t, c.epochs - 1), 0.5);
}

TEST(Search, ConfigValidation) {
    SearchConfig c;
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SearchConfig{};
    c.tau_end = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Search, ArchStepLeavesNetworkWeightsAlone) {
    const auto data = tiny_data();
    const auto cfg = tiny_search();
    auto state = search::SearchState::create(tiny_net(), cfg);
    const auto weights_before = snapshot(state.net.parameters());
    const auto arch_before = snapshot(state.arch.tensors());
    const double loss = search::arch_step(state, first_batch(data, 4), 2.0, cfg);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_EQ(snapshot(state.net.parameters()), weights_before);

    // Every transition matrix received a gradient and moved.
    const auto& tl = state.arch.normal.transition_logits;
    std::size_t moved = 0, total = 0;
    const auto after = snapshot(state.arch.tensors());
    for (std::size_t i = 0; i < after.size(); ++i) {
        moved += after[i] != arch_before[i] ? 1 : 0;
        ++total;
    }
    EXPECT_EQ(moved, total);
    for (const auto& per_edge : tl) {
        for (const auto& m : per_edge) {
            const auto p = transition::materialize_matrix(m);
            for (std::size_t r = 0; r < 7; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < 7; ++c) {
                    s += p.at(r * 7 + c);
                }
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(Search, WeightStepLeavesArchitectureAlone) {
    const auto data = tiny_data();
    const auto cfg = tiny_search();
    auto state = search::SearchState::create(tiny_net(), cfg);
    const auto arch_before = snapshot(state.arch.tensors());
    const auto weights_before = snapshot(state.net.parameters());
    search::weight_step(state, first_batch(data, 4), 0.025, 5.0, cfg);
    EXPECT_EQ(snapshot(state.arch.tensors()), arch_before);
    EXPECT_NE(snapshot(state.net.parameters()), weights_before);
    EXPECT_EQ(state.weight_steps, 1u);
}

TEST(Search, NonFiniteLossIsReported) {
    const auto data = tiny_data();
    const auto cfg = tiny_search();
    auto state = search::SearchState::create(tiny_net(), cfg);
    state.net.parameters().front().mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(search::weight_step(state, first_batch(data, 4), 0.025, 5.0, cfg), NumericError);
}

TEST(Search, RunIsBitwiseDeterministic) {
    const auto data = tiny_data();
    const auto cfg = tiny_search(2);
    const auto a = search::run_search(tiny_net(), cfg, data);
    const auto b = search::run_search(tiny_net(), cfg, data);
    EXPECT_EQ(a.history.size(), 2u);
    EXPECT_EQ(snapshot(a.state.arch.tensors()), snapshot(b.state.arch.tensors()));
    EXPECT_EQ(search::format_history(a.history), search::format_history(b.history));
    EXPECT_EQ(a.history.front().tau, 5.0);
    EXPECT_EQ(a.history.back().tau, 0.5);

    auto other = cfg;
    other.seed = 22;
    EXPECT_NE(snapshot(search::run_search(tiny_net(), other, data).state.arch.tensors()),
              snapshot(a.state.arch.tensors()));
}

TEST(Search, StepCallbackAndEarlyStop) {
    const auto data = tiny_data();
    std::size_t weight = 0, arch = 0;
    const auto r = search::run_search(
        tiny_net(), tiny_search(3), data,
        [&](const search::SearchState&, search::StepKind kind, std::size_t, double) {
            (kind == search::StepKind::Weight ? weight : arch) += 1;
        },
        3);
    EXPECT_EQ(weight, 3u);
    EXPECT_EQ(arch, 3u);
    EXPECT_EQ(r.state.arch_steps, 3u);
    EXPECT_EQ(r.history.size(), 2u);
}

TEST(Search, GradientProbeIsFinite) {
    const auto data = tiny_data();
    auto state = search::SearchState::create(tiny_net(), tiny_search());
    const auto report =
        search::gradient_probe(state.net, state.arch, first_batch(data, 2), 1.0, 5, CellKind::Normal, 0);
    ASSERT_EQ(report.autodiff.size(), 7u);
    ASSERT_EQ(report.closed_form.size(), 7u);
    EXPECT_LT(report.k0, 7u);
    for (double v : report.autodiff) {
        EXPECT_TRUE(std::isfinite(v));
    }
    EXPECT_TRUE(std::isfinite(report.max_abs_deviation));
}

TEST(Search, RetrainLearnsTheEasyTask) {
    const auto data = tiny_data(32);
    const auto [train, val] = search::split_train_val(data, 1);
    Genotype g;
    for (CellGenotype* cell : {&g.normal, &g.reduction}) {
        for (int j = 2; j < 6; ++j) {
            cell->nodes.push_back({GenotypeEntry{0, "sep_conv_3x3"}, GenotypeEntry{1, "identity"}});
        }
    }
    g.op_set = OperationSet::darts_default().names();
    search::RetrainConfig rc;
    rc.epochs = 20;
    rc.lr_start = 0.1;
    const auto report = search::retrain(tiny_net(), g, train, val, rc);
    EXPECT_EQ(report.epoch_losses.size(), 20u);
    EXPECT_LT(report.epoch_losses.back(), report.epoch_losses.front());
    EXPECT_GE(report.val_acc, 0.9);
}

// Quadratic probe: one optimizer step on f(p) = sum((p - c)^2) lowers f.
TEST(Search, SingleStepDecreasesAConvexObjective) {
    const std::vector<double> c = {1.0, -2.0, 0.5};
    auto objective = [&](const ad::Tensor& p) {
        const ad::Tensor d = ad::add(p, ad::Tensor::vector({-c[0], -c[1], -c[2]}));
        return ad::sum(ad::mul(d, d));
    };
    for (int which = 0; which < 2; ++which) {
        ad::Tape::active().reset();
        std::vector<ad::Tensor> params = {ad::Tensor::vector({0.0, 0.0, 0.0}, true)};
        const double before = objective(params[0]).item();
        ad::backward(objective(params[0]));
        ad::Tape::active().reset();
        std::vector<std::vector<double>> a(1, std::vector<double>(3, 0.0)), b = a;
        if (which == 0) {
            search::sgd_update(params, a, 0.025, 0.9, 3e-4);
        } else {
            search::adamw_update(params, a, b, 1, SearchConfig{});
        }
        ad::NoGradGuard guard;
        EXPECT_LT(objective(params[0]).item(), before) << (which == 0 ? "sgd" : "adamw");
    }
}
