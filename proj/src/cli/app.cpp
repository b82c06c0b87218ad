#include "itnas/cli/app.hpp"

#include <iostream>

#include <CLI11.hpp>

#include "itnas/acceptance/acceptance.hpp"
#include "itnas/cli/commands.hpp"

namespace itnas::cli {

namespace {

void add_config_options(CLI::App* cmd, ConfigSource& src, std::string& config, std::string& out) {
    cmd->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_flag("--toy", src.toy, "start from the desk-scale preset");
    cmd->add_option("--set", src.overrides, "override a field, e.g. search.epochs=3")
        ->allow_extra_args(false);
    cmd->add_option("--out", out, "output directory");
    cmd->add_flag("--force", src.force, "reuse an existing output directory");
}

void finish_source(ConfigSource& src, const std::string& config, const std::string& out) {
    if (!config.empty()) {
        src.file = config;
    }
    if (!out.empty()) {
        src.output_dir = out;
    }
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Architecture search with inter-layer transition learning", "itnas"};
    app.require_subcommand(1);

    ConfigSource search_src;
    std::string search_config, search_out;
    CLI::App* search = app.add_subcommand("search", "run the bi-level search");
    add_config_options(search, search_src, search_config, search_out);

    std::string prune_ckpt, prune_strategy = "tiep", prune_out;
    bool prune_force = false;
    CLI::App* prune = app.add_subcommand("prune", "derive a genotype from an arch checkpoint");
    prune->add_option("--checkpoint", prune_ckpt, "arch.ckpt written by search")->required();
    prune->add_option("--strategy", prune_strategy, "tiep | hard | alg1-batch")
        ->check(CLI::IsMember({"tiep", "hard", "alg1-batch"}));
    prune->add_option("--out", prune_out,
                      "genotype file (default: <checkpoint dir>/<strategy>.genotype.json)");
    prune->add_flag("--force", prune_force, "replace an existing genotype file");

    ConfigSource eval_src;
    std::string eval_genotype, eval_config, eval_out;
    CLI::App* eval = app.add_subcommand("eval", "retrain a genotype from scratch and report accuracy");
    eval->add_option("--genotype", eval_genotype, "genotype file")->required();
    add_config_options(eval, eval_src, eval_config, eval_out);

    std::string dot_genotype, dot_out;
    bool dot_force = false;
    CLI::App* dot = app.add_subcommand("export-dot", "write DOT graphs of both cells");
    dot->add_option("--genotype", dot_genotype, "genotype file")->required();
    dot->add_option("--out", dot_out, "output directory")->required();
    dot->add_flag("--force", dot_force, "reuse an existing output directory");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient battery");

    std::string selftest_dir;
    std::vector<int> selftest_only;
    CLI::App* selftest = app.add_subcommand("selftest", "run the acceptance suite");
    selftest->add_option("--work-dir", selftest_dir, "scratch directory");
    selftest->add_option("--only", selftest_only, "criterion numbers to run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* failing = &app;
        for (const CLI::App* sub : app.get_subcommands()) {
            failing = sub;
        }
        err << failing->help();
        return kExitConfig;
    }

    const Streams io{out, err};
    if (search->parsed()) {
        finish_source(search_src, search_config, search_out);
        return cmd_search(search_src, io);
    }
    if (prune->parsed()) {
        const std::filesystem::path ckpt(prune_ckpt);
        const std::filesystem::path target =
            prune_out.empty() ? ckpt.parent_path() / (prune_strategy + ".genotype.json")
                              : std::filesystem::path(prune_out);
        return cmd_prune(ckpt, *parse_strategy(prune_strategy), target, prune_force, io);
    }
    if (eval->parsed()) {
        finish_source(eval_src, eval_config, eval_out);
        return cmd_eval(eval_genotype, eval_src, io);
    }
    if (dot->parsed()) {
        return cmd_export_dot(dot_genotype, dot_out, dot_force, io);
    }
    if (gradcheck->parsed()) {
        return cmd_gradcheck(io);
    }
    if (selftest->parsed()) {
        acceptance::AcceptanceOptions options;
        options.work_dir = selftest_dir;
        options.only = selftest_only;
        bool all = true;
        acceptance::run_acceptance(options, [&](const acceptance::CriterionResult& r) {
            out << acceptance::format_result(r) << std::endl;
            all = all && r.passed;
        });
        return all ? kExitOk : kExitConfig;
    }
    return kExitConfig;
}

} // namespace itnas::cli
