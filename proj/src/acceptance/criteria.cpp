#include "itnas/acceptance/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "itnas/acceptance/instances.hpp"
#include "itnas/cli/commands.hpp"
#include "itnas/cli/gradcheck_battery.hpp"
#include "itnas/genotype_io.hpp"
#include "itnas/ops.hpp"
#include "itnas/search.hpp"

namespace itnas::acceptance {

namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string num(double v, const char* fmt = "%.3g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

bool one_hot(std::span<const double> z) {
    std::size_t ones = 0;
    for (double v : z) {
        if (v == 1.0) {
            ++ones;
        } else if (v != 0.0) {
            return false;
        }
    }
    return ones == 1;
}

double sum_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s;
}

fs::path fresh_dir(const fs::path& root, const std::string& name) {
    const fs::path dir = root / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) { return io::read_text_file(p); }

// Worst deviation from the simplex constraints over every architecture
// quantity of one cell kind.
double simplex_deviation(const CellArchParams& p, const CellTopology& topology,
                         const EdgeWeightMap& weights) {
    double worst = 0.0;
    for (const auto& row : p.transition_logits) {
        for (const ad::Tensor& logits : row) {
            const ad::Tensor m = transition::materialize_matrix(logits);
            const std::size_t k = m.dim(0);
            for (std::size_t r = 0; r < k; ++r) {
                worst = std::max(worst, std::abs(sum_of(m.values().subspan(r * k, k)) - 1.0));
            }
        }
    }
    for (const ad::Tensor& logits : p.attention_logits) {
        const ad::Tensor beta =
            transition::materialize_attention(logits, std::vector<bool>(logits.numel(), true));
        worst = std::max(worst, std::abs(sum_of(beta.values()) - 1.0));
    }
    for (const EdgeId& e : topology.edges()) {
        const auto z = weights.at(e).values();
        worst = std::max(worst, std::abs(sum_of(z) - 1.0));
        for (double v : z) {
            if (v < 0.0) {
                worst = std::max(worst, -v);
            }
        }
    }
    return worst;
}

Outcome simplex_suite() {
    data::Dataset d = data::gen_synthetic(data::SyntheticSpec::easy());
    search::SearchConfig config;
    config.epochs = 7;
    config.batch_size = 8;
    config.seed = 1;
    constexpr std::size_t kPairs = 100; // 200 optimizer steps
    std::mt19937_64 noise_rng(99);
    std::size_t steps = 0;
    double worst = 0.0;
    auto check = [&](const search::SearchState& state, search::StepKind, std::size_t, double) {
        ad::NoGradGuard no_grad;
        const CellTopology& topology = state.net.topology();
        const auto mode = search::relaxed_weights(
            state.arch, topology, 1.0, search::GumbelNoise::zero(topology, state.arch.num_ops));
        const auto sampled = search::relaxed_weights(
            state.arch, topology, 0.5,
            search::GumbelNoise::draw(noise_rng, topology, state.arch.num_ops));
        for (CellKind kind : {CellKind::Normal, CellKind::Reduction}) {
            worst = std::max(worst, simplex_deviation(state.arch.cell(kind), topology, mode.cell(kind)));
            worst = std::max(worst,
                             simplex_deviation(state.arch.cell(kind), topology, sampled.cell(kind)));
        }
        ++steps;
    };
    search::run_search(SuperNetConfig::toy(), config, d, check, kPairs);
    return {steps == 2 * kPairs && worst <= kSimplexTolerance,
            std::to_string(steps) + " optimizer steps, worst deviation " + num(worst)};
}

Outcome gumbel_unbiased() {
    const std::vector<double> alpha{0.2, 0.3, 0.5};
    std::vector<double> logits;
    for (double a : alpha) {
        logits.push_back(std::log(a));
    }
    const ad::Tensor a = ad::Tensor::vector(logits);
    constexpr std::size_t kSamples = 100000;
    std::mt19937_64 rng(2024);
    std::vector<std::size_t> counts(3, 0);
    ad::NoGradGuard no_grad;
    for (std::size_t s = 0; s < kSamples; ++s) {
        const std::vector<double> g = relax::gumbel_noise(rng, 3);
        const ad::Tensor z = relax::concrete_sample(a, g, 0.05);
        ++counts[relax::argmax(z.values())];
    }
    double worst = 0.0;
    std::string freqs;
    for (std::size_t k = 0; k < 3; ++k) {
        const double f = static_cast<double>(counts[k]) / kSamples;
        worst = std::max(worst, std::abs(f - alpha[k]));
        freqs += (k ? ", " : "") + num(f, "%.4f");
    }
    return {worst <= kFrequencyTolerance,
            "frequencies (" + freqs + "), max deviation " + num(worst, "%.4f")};
}

Outcome gradient_fidelity() {
    const auto items = cli::run_gradcheck_battery();
    double worst = 0.0;
    std::string worst_name;
    bool transition = false, attention = false;
    for (const auto& item : items) {
        if (item.max_rel_error >= worst) {
            worst = item.max_rel_error;
            worst_name = item.name;
        }
        transition = transition || item.touches_transition;
        attention = attention || item.touches_attention;
    }
    return {worst <= cli::kGradcheckTolerance && transition && attention,
            std::to_string(items.size()) + " items, worst " + num(worst) + " (" + worst_name + ")"};
}

Outcome oracle_equivalence() {
    const CellTopology topology = CellTopology::canonical();
    std::size_t checked = 0, mismatches = 0;
    for (std::size_t k : {3, 5, 7}) {
        const OperationSet ops = op_subset(k);
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const PruneInstance inst = make_instance(1000 * k + seed, k);
            const CellGenotype got = pruning::tiep(inst.outer_z, inst.params, topology, ops).cell;
            mismatches += got == reference_tiep(inst, ops) ? 0 : 1;
            ++checked;
        }
    }
    return {mismatches == 0,
            std::to_string(checked) + " instances, " + std::to_string(mismatches) + " mismatches"};
}

struct StructuralStats {
    std::size_t instances = 0;
    std::size_t shape_failures = 0;
    std::size_t one_hot_failures = 0;
    std::size_t invalid = 0;
    std::size_t node2_failures = 0;
    std::size_t events = 0;
    std::size_t renorm_failures = 0;
    double worst_renorm = 0.0;
};

StructuralStats structural_sweep() {
    const CellTopology topology = CellTopology::canonical();
    StructuralStats st;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const std::size_t k = 3 + 2 * (i % 3);
        const OperationSet ops = op_subset(k);
        const PruneInstance inst = make_instance(500000 + i, k);
        const pruning::TiepResult tiep =
            pruning::tiep(inst.outer_z, inst.params, topology, ops);
        pruning::NumericWeights all = inst.outer_z;
        for (auto& [e, z] : pruning::derive_numeric(inst.outer_z, inst.params, topology)) {
            all.emplace(e, z);
        }
        const CellGenotype hard = pruning::darts_hard_prune(all, topology, ops);
        ++st.instances;

        for (const CellGenotype* cell : {&tiep.cell, &hard}) {
            bool ok = cell->nodes.size() == 4;
            for (std::size_t n = 0; ok && n < cell->nodes.size(); ++n) {
                const auto& pair = cell->nodes[n];
                ok = pair[0].source != pair[1].source && pair[0].source < static_cast<int>(n) + 2 &&
                     pair[1].source < static_cast<int>(n) + 2;
            }
            st.shape_failures += ok ? 0 : 1;
            Genotype g{*cell, *cell, ops.names(), {i, "structural"}};
            st.invalid += io::validate(g).empty() ? 0 : 1;
        }
        for (const auto& [node, edges] : tiep.state.retained) {
            st.shape_failures += edges.size() == 2 ? 0 : 1;
            for (const EdgeId& e : edges) {
                const auto& z = tiep.state.current_z.at(e);
                const bool ok = one_hot(z) && relax::hard_one_hot(z) == z;
                st.one_hot_failures += ok ? 0 : 1;
            }
        }
        const std::vector<EdgeId> node2{{0, 2}, {1, 2}};
        const bool node2_ok = tiep.state.retained.count(2) && tiep.state.retained.at(2) == node2 &&
                              tiep.cell.nodes[0][0].source == 0 && tiep.cell.nodes[0][1].source == 1;
        st.node2_failures += node2_ok ? 0 : 1;

        for (const pruning::PruneEvent& ev : tiep.events) {
            ++st.events;
            const auto successors = topology.successors_of_node(ev.pruned.dst);
            bool ok = ev.renormalized.size() == successors.size();
            for (const pruning::AttentionSnapshot& snap : ev.renormalized) {
                const double dev = std::abs(sum_of(snap.beta) - 1.0);
                st.worst_renorm = std::max(st.worst_renorm, dev);
                const auto pos = std::find(snap.predecessors.begin(), snap.predecessors.end(),
                                           ev.pruned) - snap.predecessors.begin();
                ok = ok && dev <= kRenormTolerance &&
                     static_cast<std::size_t>(pos) < snap.beta.size() && snap.beta[pos] == 0.0;
            }
            st.renorm_failures += ok ? 0 : 1;
        }
    }
    return st;
}

const StructuralStats& structural_cached() {
    static const StructuralStats stats = structural_sweep();
    return stats;
}

Outcome structural() {
    const StructuralStats& s = structural_cached();
    return {s.instances == 1000 && s.shape_failures == 0 && s.one_hot_failures == 0 && s.invalid == 0,
            std::to_string(s.instances) + " instances; shape failures " +
                std::to_string(s.shape_failures) + ", one-hot failures " +
                std::to_string(s.one_hot_failures) + ", invalid genotypes " + std::to_string(s.invalid)};
}

Outcome node2() {
    const StructuralStats& s = structural_cached();
    return {s.instances > 0 && s.node2_failures == 0,
            std::to_string(s.instances - s.node2_failures) + "/" + std::to_string(s.instances) +
                " instances retain (0,2) and (1,2)"};
}

Outcome renormalization() {
    const StructuralStats& s = structural_cached();
    return {s.events > 0 && s.renorm_failures == 0,
            std::to_string(s.events) + " prune events, worst |sum - 1| " + num(s.worst_renorm) +
                ", failures " + std::to_string(s.renorm_failures)};
}

Outcome determinism(const fs::path& work) {
    const fs::path root = fresh_dir(work, "determinism");
    cli::ConfigSource src;
    src.toy = true;
    src.overrides = {"search.epochs=2", "data.synthetic.samples_per_class=16", "seed=7"};
    std::ostringstream log;
    const cli::Streams io{log, log};
    std::string ckpt[2], geno[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / ("run" + std::to_string(run));
        src.output_dir = dir.string();
        if (cli::cmd_search(src, io) != cli::kExitOk ||
            cli::cmd_prune(dir / "arch.ckpt", pruning::Strategy::Tiep, dir / "tiep.genotype.json",
                           false, io) != cli::kExitOk) {
            return {false, "command failed: " + log.str()};
        }
        ckpt[run] = slurp(dir / "arch.ckpt");
        geno[run] = slurp(dir / "tiep.genotype.json");
    }
    const bool same_ckpt = ckpt[0] == ckpt[1];
    const bool same_geno = geno[0] == geno[1];
    return {same_ckpt && same_geno, std::string("arch.ckpt ") +
                                        (same_ckpt ? "identical" : "differs") + " (" +
                                        std::to_string(ckpt[0].size()) + " bytes), genotype " +
                                        (same_geno ? "identical" : "differs")};
}

Outcome end_to_end(const fs::path& work) {
    const fs::path root = fresh_dir(work, "e2e");
    std::ostringstream log;
    const cli::Streams io{log, log};
    cli::ConfigSource src;
    src.toy = true;
    src.output_dir = (root / "search").string();
    if (cli::cmd_search(src, io) != cli::kExitOk) {
        return {false, "search failed: " + log.str()};
    }
    std::vector<double> train_losses;
    {
        std::istringstream hist(slurp(root / "search" / "history.txt"));
        std::size_t epoch = 0;
        double tau = 0, tl = 0, vl = 0;
        while (hist >> epoch >> tau >> tl >> vl) {
            train_losses.push_back(tl);
        }
    }
    if (train_losses.size() != 5) {
        return {false, "history has " + std::to_string(train_losses.size()) + " epochs"};
    }
    const fs::path geno = root / "search" / "tiep.genotype.json";
    if (cli::cmd_prune(root / "search" / "arch.ckpt", pruning::Strategy::Tiep, geno, false, io) !=
        cli::kExitOk) {
        return {false, "prune failed: " + log.str()};
    }
    const bool valid = io::validate_document(slurp(geno)).empty();
    cli::ConfigSource eval_src;
    eval_src.toy = true;
    eval_src.output_dir = (root / "eval").string();
    if (cli::cmd_eval(geno, eval_src, io) != cli::kExitOk) {
        return {false, "eval failed: " + log.str()};
    }
    const auto record = nlohmann::json::parse(slurp(root / "eval" / "eval.json"));
    const double val_acc = record.at("val_acc").get<double>();
    const bool decreased = train_losses.back() < train_losses.front();
    return {decreased && valid && val_acc >= kMinToyValAccuracy,
            "train loss " + num(train_losses.front(), "%.4f") + " -> " +
                num(train_losses.back(), "%.4f") + ", genotype " + (valid ? "valid" : "invalid") +
                ", val_acc " + num(val_acc, "%.4f")};
}

Outcome schedule_endpoints() {
    const search::SearchConfig defaults;
    const relax::TemperatureSchedule tau = defaults.temperature();
    const double t0 = relax::temperature_at(tau, 0);
    const double t1 = relax::temperature_at(tau, tau.total_steps);
    const double lr0 = search::cosine_lr(defaults.weight_lr_start, defaults.weight_lr_end, 0,
                                         defaults.epochs);
    const double lr1 = search::cosine_lr(defaults.weight_lr_start, defaults.weight_lr_end,
                                         defaults.epochs - 1, defaults.epochs);
    return {t0 == 5.0 && t1 == 0.5 && lr0 == 0.025 && lr1 == 1e-3,
            "tau " + num(t0, "%.17g") + " -> " + num(t1, "%.17g") + ", lr " + num(lr0, "%.17g") +
                " -> " + num(lr1, "%.17g")};
}

Outcome divergence_fixture() {
    const CellTopology topology = CellTopology::canonical();
    const OperationSet ops = op_subset(7);
    const PruneInstance inst = make_instance(kDivergenceSeed, 7);
    const CellGenotype tiep = pruning::tiep(inst.outer_z, inst.params, topology, ops).cell;
    pruning::NumericWeights all = inst.outer_z;
    for (auto& [e, z] : pruning::derive_numeric(inst.outer_z, inst.params, topology)) {
        all.emplace(e, z);
    }
    const CellGenotype hard = pruning::darts_hard_prune(all, topology, ops);
    std::string nodes;
    for (std::size_t n = 0; n < tiep.nodes.size(); ++n) {
        if (tiep.nodes[n] != hard.nodes[n]) {
            nodes += (nodes.empty() ? "" : ",") + std::to_string(n + 2);
        }
    }
    return {!(tiep == hard), "seed " + std::to_string(kDivergenceSeed) + ", nodes differing: " +
                                 (nodes.empty() ? "none" : nodes)};
}

Outcome parameter_count() {
    const CellTopology topology = CellTopology::canonical();
    const auto count = transition::count_params(topology, 7);
    std::mt19937_64 rng(0);
    const CellArchParams p = CellArchParams::init(topology, 7, rng, 0.0);
    std::size_t actual = 0;
    for (const auto& row : p.transition_logits) {
        for (const auto& t : row) {
            actual += t.numel();
        }
    }
    for (const auto& t : p.attention_logits) {
        actual += t.numel();
    }
    return {count.matrices == 16 && count.attention_scores == 16 &&
                count.logits == 16 * 49 + 16 && actual == count.logits,
            std::to_string(count.matrices) + " matrices, " + std::to_string(count.attention_scores) +
                " attention scores, " + std::to_string(count.logits) + " logits per cell"};
}

struct Criterion {
    int id;
    const char* title;
    double budget;
    std::function<Outcome(const fs::path&)> run;
};

} // namespace

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const Reporter& report) {
    const fs::path work =
        options.work_dir.empty() ? fs::temp_directory_path() / "itnas-acceptance" : options.work_dir;
    const std::vector<Criterion> criteria = {
        {1, "simplex constraints through a 200-step toy search", 60.0,
         [](const fs::path&) { return simplex_suite(); }},
        {2, "Gumbel argmax frequencies match alpha", 30.0,
         [](const fs::path&) { return gumbel_unbiased(); }},
        {3, "gradient check battery", 120.0, [](const fs::path&) { return gradient_fidelity(); }},
        {4, "TIEP equals the reference implementation", 60.0,
         [](const fs::path&) { return oracle_equivalence(); }},
        {5, "pruning structural postconditions", 60.0, [](const fs::path&) { return structural(); }},
        {6, "node 2 keeps both input edges", 0.0, [](const fs::path&) { return node2(); }},
        {7, "attention renormalization after pruning", 0.0,
         [](const fs::path&) { return renormalization(); }},
        {8, "search and prune are byte-deterministic", 0.0,
         [](const fs::path& w) { return determinism(w); }},
        {9, "toy end-to-end run", 600.0, [](const fs::path& w) { return end_to_end(w); }},
        {10, "temperature and learning-rate endpoints", 0.0,
         [](const fs::path&) { return schedule_endpoints(); }},
        {11, "TIEP and hard pruning diverge on the pinned instance", 0.0,
         [](const fs::path&) { return divergence_fixture(); }},
        {12, "transition parameter count", 0.0, [](const fs::path&) { return parameter_count(); }},
    };
    std::vector<CriterionResult> results;
    for (const Criterion& c : criteria) {
        if (!options.only.empty() &&
            std::find(options.only.begin(), options.only.end(), c.id) == options.only.end()) {
            continue;
        }
        CriterionResult r{c.id, c.title, false, "", 0.0, c.budget};
        const auto start = std::chrono::steady_clock::now();
        try {
            const Outcome o = c.run(work);
            r.passed = o.passed;
            r.detail = o.detail;
        } catch (const std::exception& e) {
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget > 0.0 && r.seconds > c.budget) {
            r.passed = false;
            r.detail += "; exceeded " + num(c.budget, "%.0f") + " s budget";
        }
        if (report) {
            report(r);
        }
        results.push_back(std::move(r));
    }
    return results;
}

std::string format_result(const CriterionResult& r) {
    char timing[32];
    std::snprintf(timing, sizeof timing, "%.1f s", r.seconds);
    return std::string(r.passed ? "PASS" : "FAIL") + " [" + std::to_string(r.id) + "] " + r.title +
           ": " + r.detail + " (" + timing + ")";
}

} // namespace itnas::acceptance
