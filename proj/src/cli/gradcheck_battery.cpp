#include "itnas/cli/gradcheck_battery.hpp"

#include <functional>
#include <random>

#include "itnas/gradcheck.hpp"
#include "itnas/ops.hpp"
#include "itnas/relaxation.hpp"
#include "itnas/search.hpp"
#include "itnas/supernet.hpp"
#include "itnas/transition.hpp"

namespace itnas::cli {

namespace {

using ad::Tensor;

class Battery {
public:
    explicit Battery(std::uint64_t seed) : rng_(seed) {}

    Tensor random(ad::Shape shape, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> dist(lo, hi);
        std::vector<double> v(ad::shape_numel(shape));
        for (double& x : v) {
            x = dist(rng_);
        }
        return Tensor(std::move(shape), std::move(v), true);
    }

    // Values spread apart so relu kinks and pooling ties are far from every coordinate.
    Tensor spread(ad::Shape shape) {
        const std::size_t n = ad::shape_numel(shape);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        }
        std::shuffle(v.begin(), v.end(), rng_);
        return Tensor(std::move(shape), std::move(v), true);
    }

    // sum(f(...) * R) for a fixed random R, so every output coordinate matters.
    void add(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> params,
             std::size_t max_coords = 0, bool transition = false, bool attention = false) {
        Tensor probe;
        {
            ad::NoGradGuard no_grad;
            probe = f();
        }
        const Tensor weights = random(probe.shape()).detach();
        auto objective = [f, weights] { return ad::sum(ad::mul(f(), weights)); };
        ad::FiniteDiffOptions opts;
        opts.max_coords_per_param = max_coords;
        const ad::FiniteDiffReport r = ad::finite_diff_check(objective, params, opts);
        items_.push_back({name, r.max_rel_error, r.coords_checked, transition, attention});
    }

    // Objective that is already a scalar loss.
    void add_scalar(const std::string& name, const std::function<Tensor()>& f,
                    std::vector<Tensor> params, std::size_t max_coords, bool transition,
                    bool attention) {
        ad::FiniteDiffOptions opts;
        opts.max_coords_per_param = max_coords;
        const ad::FiniteDiffReport r = ad::finite_diff_check(f, params, opts);
        items_.push_back({name, r.max_rel_error, r.coords_checked, transition, attention});
    }

    std::mt19937_64& rng() { return rng_; }
    std::vector<GradcheckItem> take() { return std::move(items_); }

private:
    std::mt19937_64 rng_;
    std::vector<GradcheckItem> items_;
};

void primitives(Battery& b) {
    const Tensor x = b.random({2, 3}), y = b.random({2, 3});
    b.add("add", [=] { return ad::add(x, y); }, {x, y});
    b.add("mul", [=] { return ad::mul(x, y); }, {x, y});
    b.add("negate", [=] { return ad::negate(x); }, {x});
    b.add("scale", [=] { return ad::scale(x, -1.7); }, {x});
    b.add("exp", [=] { return ad::exp(x); }, {x});
    const Tensor pos = b.random({5}, 0.2, 2.0);
    b.add("log", [=] { return ad::log(pos); }, {pos});
    const Tensor r = b.spread({3, 4});
    b.add("relu", [=] { return ad::relu(r); }, {r});
    const Tensor s = b.random({3, 5}, -2.0, 2.0);
    b.add("softmax", [=] { return ad::softmax(s); }, {s});
    b.add("log_softmax", [=] { return ad::log_softmax(s); }, {s});
    const std::vector<bool> mask{true, false, true, true, false};
    b.add("masked_softmax", [=] { return ad::masked_softmax(s, mask); }, {s});
    const Tensor m = b.random({3, 4}), v = b.random({4}), m2 = b.random({4, 2});
    b.add("matvec", [=] { return ad::matvec(m, v); }, {m, v});
    b.add("matmul", [=] { return ad::matmul(m, m2); }, {m, m2});

    const Tensor img = b.spread({2, 3, 6, 6});
    const Tensor k3 = b.random({3, 3, 3}), k5 = b.random({3, 5, 5});
    b.add("depthwise_conv2d 3x3", [=] { return ad::depthwise_conv2d(img, k3, {1, 1, 1}); },
          {img, k3});
    b.add("depthwise_conv2d 5x5 stride 2 dilation 2",
          [=] { return ad::depthwise_conv2d(img, k5, {2, 2, 4}); }, {img, k5});
    const Tensor pw = b.random({4, 3}), bias = b.random({4});
    b.add("pointwise_conv2d", [=] { return ad::pointwise_conv2d(img, pw, bias, 1); },
          {img, pw, bias});
    b.add("pointwise_conv2d stride 2", [=] { return ad::pointwise_conv2d(img, pw, bias, 2); },
          {img, pw, bias});
    b.add("avg_pool3x3", [=] { return ad::avg_pool3x3(img, 1); }, {img});
    b.add("avg_pool3x3 stride 2", [=] { return ad::avg_pool3x3(img, 2); }, {img});
    b.add("max_pool3x3", [=] { return ad::max_pool3x3(img, 1); }, {img});
    b.add("max_pool3x3 stride 2", [=] { return ad::max_pool3x3(img, 2); }, {img});
    const Tensor other = b.random({2, 2, 6, 6});
    b.add("concat_channels", [=] {
        const Tensor parts[] = {img, other};
        return ad::concat_channels(parts);
    }, {img, other});
    b.add("global_avg_pool", [=] { return ad::global_avg_pool(img); }, {img});
    const Tensor feats = b.random({2, 5}), aw = b.random({3, 5}), ab = b.random({3});
    b.add("affine", [=] { return ad::affine(feats, aw, ab); }, {feats, aw, ab});
    const std::vector<int> labels{2, 0};
    b.add("nll_loss", [=] { return ad::nll_loss(ad::log_softmax(feats), labels); }, {feats});
    b.add("sum", [=] { return ad::sum(x); }, {x});
    const Tensor t1 = b.random({2, 2}), t2 = b.random({2, 2}), t3 = b.random({2, 2});
    const Tensor wts = b.random({3});
    b.add("weighted_sum", [=] {
        const Tensor terms[] = {t1, t2, t3};
        return ad::weighted_sum(terms, wts);
    }, {t1, t2, t3, wts});
    b.add("reshape", [=] { return ad::reshape(x, {3, 2}); }, {x});
}

void relaxation_path(Battery& b) {
    const Tensor logits = b.random({7}, -1.0, 1.0);
    std::vector<double> noise = relax::gumbel_noise(b.rng(), 7);
    for (double tau : {5.0, 1.0, 0.5}) {
        b.add("concrete_sample tau=" + std::to_string(tau).substr(0, 3),
              [=] { return relax::concrete_sample(logits, noise, tau); }, {logits});
    }
}

void transition_path(Battery& b) {
    const CellTopology topology = CellTopology::canonical();
    constexpr std::size_t k = 4;
    CellArchParams params = CellArchParams::init(topology, k, b.rng(), 0.5);
    std::vector<std::vector<double>> noise;
    for (std::size_t e = 0; e < topology.outer().size(); ++e) {
        noise.push_back(relax::gumbel_noise(b.rng(), k));
    }
    auto stacked = [=](const PredecessorMasks& masks) {
        return [=] {
            EdgeWeightMap outer;
            for (std::size_t e = 0; e < topology.outer().size(); ++e) {
                outer.emplace(topology.outer()[e],
                              relax::concrete_sample(params.outer_logits[e], noise[e], 0.8));
            }
            const EdgeWeightMap inner =
                transition::derive_inner_weights(outer, params, topology, masks);
            std::vector<Tensor> parts;
            for (const auto& [edge, z] : inner) {
                parts.push_back(ad::reshape(z, {1, 1, 1, k}));
            }
            return ad::concat_channels(parts);
        };
    };

    std::vector<Tensor> transition_logits, attention_logits;
    for (const auto& row : params.transition_logits) {
        transition_logits.insert(transition_logits.end(), row.begin(), row.end());
    }
    attention_logits = params.attention_logits;

    b.add("inner weights: transition logits", stacked({}), transition_logits, 0, true, false);
    b.add("inner weights: attention logits", stacked({}), attention_logits, 0, false, true);
    b.add("inner weights: outer logits", stacked({}), params.outer_logits);

    PredecessorMasks masks;
    const EdgeId e35{3, 5};
    masks[e35] = std::vector<bool>(topology.predecessors(e35).size(), true);
    masks[e35][0] = false;
    b.add("inner weights (masked): attention logits", stacked(masks), attention_logits, 0, false,
          true);
}

void toy_loss(Battery& b) {
    SuperNetConfig config = SuperNetConfig::toy();
    config.input_height = 8;
    config.input_width = 8;
    const Network net = Network::supernet(config, 11);
    std::mt19937_64 rng(12);
    const ArchParams arch = ArchParams::init(net.topology(), config.op_set.size(), rng, 0.3);
    const search::GumbelNoise noise = search::GumbelNoise::draw(rng, net.topology(), arch.num_ops);
    data::Batch batch{b.random({2, 3, 8, 8}).detach(), {1, 3}};
    auto loss = [=] {
        return search::batch_loss(net, search::relaxed_weights(arch, net.topology(), 1.0, noise),
                                  batch);
    };
    std::vector<Tensor> transition_logits, attention_logits, outer_logits;
    for (const CellArchParams* p : {&arch.normal, &arch.reduction}) {
        for (const auto& row : p->transition_logits) {
            transition_logits.insert(transition_logits.end(), row.begin(), row.end());
        }
        attention_logits.insert(attention_logits.end(), p->attention_logits.begin(),
                                p->attention_logits.end());
        outer_logits.insert(outer_logits.end(), p->outer_logits.begin(), p->outer_logits.end());
    }
    b.add_scalar("toy validation loss: outer logits", loss, outer_logits, 3, false, false);
    b.add_scalar("toy validation loss: transition logits", loss, transition_logits, 3, true, false);
    b.add_scalar("toy validation loss: attention logits", loss, attention_logits, 0, false, true);
    b.add_scalar("toy validation loss: network weights", loss, net.parameters(), 1, false, false);
}

} // namespace

std::vector<GradcheckItem> run_gradcheck_battery() {
    Battery b(20240601);
    primitives(b);
    relaxation_path(b);
    transition_path(b);
    toy_loss(b);
    return b.take();
}

} // namespace itnas::cli
