#include "itnas/cli/commands.hpp"

#include <cstdio>
#include <iostream>

#include <json.hpp>

#include "itnas/cli/config.hpp"
#include "itnas/cli/gradcheck_battery.hpp"
#include "itnas/error.hpp"
#include "itnas/genotype_io.hpp"
#include "itnas/search.hpp"

namespace itnas::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Maps the error taxonomy onto exit codes.
template <typename Fn>
int guarded(Streams io, const char* command, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        io.err << command << ": configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& e) {
        io.err << command << ": " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        io.err << command << ": numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        io.err << command << ": " << e.what() << "\n";
        return kExitConfig;
    }
}

json load_effective(const ConfigSource& source) {
    json doc = merge_config(source.toy, source.file, source.overrides);
    if (source.output_dir) {
        doc["output_dir"] = *source.output_dir;
    }
    return doc;
}

void refuse_existing_file(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw ConfigError(path.string() + " already exists (pass --force to replace it)");
    }
}

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

void prepare_output_dir(const fs::path& dir, bool force) {
    if (dir.empty()) {
        throw ConfigError("output_dir: missing (set it in the config or pass --out)");
    }
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) {
            throw ConfigError("output_dir: " + dir.string() + " exists and is not a directory");
        }
        if (!force) {
            throw ConfigError("output_dir: " + dir.string() +
                              " already exists (pass --force to reuse it)");
        }
        return;
    }
    fs::create_directories(dir);
}

int cmd_search(const ConfigSource& source, Streams io) {
    return guarded(io, "search", [&] {
        const json doc = load_effective(source);
        const RunConfig rc = to_run_config(doc);
        const data::Dataset dataset = load_dataset(rc.data);
        const fs::path dir = rc.output_dir;
        prepare_output_dir(dir, source.force);

        io.out << "search: " << dataset.size() << " samples, " << rc.search.epochs
               << " epochs, seed " << rc.seed << "\n";
        const search::SearchResult result = search::run_search(rc.supernet, rc.search, dataset);

        const std::string digest = config_digest(doc);
        const io::Checkpoint ckpt = io::arch_to_checkpoint(
            result.state.arch, result.state.net.topology(), rc.supernet.op_set,
            {{"seed", std::to_string(rc.seed)}, {"config_digest", digest}});
        io::save_checkpoint(dir / "arch.ckpt", ckpt);
        io::write_text_file(dir / "history.txt", search::format_history(result.history));
        io::write_text_file(dir / "config.echo.json", config_text(doc));
        for (const search::HistoryRecord& r : result.history) {
            io.out << "epoch " << r.epoch << " tau " << fixed(r.tau) << " train_loss "
                   << fixed(r.train_loss) << " val_loss " << fixed(r.val_loss) << "\n";
        }
        io.out << "wrote " << (dir / "arch.ckpt").string() << "\n";
        return static_cast<int>(kExitOk);
    });
}

std::optional<pruning::Strategy> parse_strategy(const std::string& name) {
    if (name == "tiep") {
        return pruning::Strategy::Tiep;
    }
    if (name == "hard") {
        return pruning::Strategy::Hard;
    }
    if (name == "alg1-batch") {
        return pruning::Strategy::BatchTop2;
    }
    return std::nullopt;
}

int cmd_prune(const fs::path& checkpoint, pruning::Strategy strategy, const fs::path& output,
              bool force, Streams io) {
    return guarded(io, "prune", [&] {
        const io::Checkpoint ckpt = io::load_checkpoint(checkpoint);
        const CellTopology topology = CellTopology::canonical();
        const OperationSet op_set = io::op_set_from_checkpoint(ckpt);
        const ArchParams arch = io::arch_from_checkpoint(ckpt, topology);
        Provenance provenance;
        if (auto it = ckpt.meta.find("seed"); it != ckpt.meta.end()) {
            try {
                provenance.seed = std::stoull(it->second);
            } catch (const std::exception&) {
                throw FormatError("checkpoint: malformed seed '" + it->second + "'");
            }
        }
        if (auto it = ckpt.meta.find("config_digest"); it != ckpt.meta.end()) {
            provenance.config_digest = it->second;
        }
        const Genotype genotype =
            pruning::derive_genotype(arch, topology, op_set, strategy, provenance);
        const auto issues = io::validate(genotype);
        if (!issues.empty()) {
            throw FormatError("derived genotype failed validation: " + issues.front().location +
                              ": " + issues.front().message);
        }
        refuse_existing_file(output, force);
        if (output.has_parent_path()) {
            fs::create_directories(output.parent_path());
        }
        io::write_text_file(output, io::serialize_genotype(genotype));
        io.out << "wrote " << output.string() << " (digest " << io::genotype_digest(genotype)
               << ")\n";
        return static_cast<int>(kExitOk);
    });
}

int cmd_eval(const fs::path& genotype_path, const ConfigSource& source, Streams io) {
    return guarded(io, "eval", [&] {
        const Genotype genotype = io::parse_genotype(io::read_text_file(genotype_path));
        json doc = merge_config(source.toy, source.file, source.overrides);
        const RunConfig rc = to_run_config(doc);
        for (const std::string& name : genotype.op_set) {
            if (!rc.supernet.op_set.index_of(name)) {
                throw ConfigError("genotype operation '" + name +
                                  "' is not in supernet.op_set");
            }
        }
        const data::Dataset dataset = load_dataset(rc.data);
        if (source.output_dir) {
            prepare_output_dir(*source.output_dir, source.force);
        }
        auto [train, val] = search::split_train_val(dataset, rc.seed);
        const search::RetrainReport report =
            search::retrain(rc.supernet, genotype, train, val, rc.eval);

        const json record = {{"genotype_digest", io::genotype_digest(genotype)},
                             {"seed", rc.seed},
                             {"train_acc", report.train_acc},
                             {"val_acc", report.val_acc}};
        io.out << "eval: " << rc.eval.epochs << " epochs, final train loss "
               << fixed(report.epoch_losses.back()) << "\n";
        io.out << "train_acc " << fixed(report.train_acc) << " val_acc " << fixed(report.val_acc)
               << "\n";
        io.out << record.dump() << "\n";
        if (source.output_dir) {
            io::write_text_file(fs::path(*source.output_dir) / "eval.json", record.dump(2) + "\n");
        }
        return static_cast<int>(kExitOk);
    });
}

int cmd_export_dot(const fs::path& genotype_path, const fs::path& output_dir, bool force,
                   Streams io) {
    return guarded(io, "export-dot", [&] {
        const Genotype genotype = io::parse_genotype(io::read_text_file(genotype_path));
        prepare_output_dir(output_dir, force);
        io::write_text_file(output_dir / "normal.dot", io::to_dot(genotype.normal, CellKind::Normal));
        io::write_text_file(output_dir / "reduction.dot",
                            io::to_dot(genotype.reduction, CellKind::Reduction));
        io.out << "wrote " << (output_dir / "normal.dot").string() << " and "
               << (output_dir / "reduction.dot").string() << "\n";
        return static_cast<int>(kExitOk);
    });
}

int cmd_gradcheck(Streams io) {
    return guarded(io, "gradcheck", [&] {
        const std::vector<GradcheckItem> items = run_gradcheck_battery();
        std::vector<std::string> failed;
        for (const GradcheckItem& item : items) {
            const bool ok = item.max_rel_error <= kGradcheckTolerance;
            char line[256];
            std::snprintf(line, sizeof line, "%-48s max_rel_error %.3e coords %5zu %s\n",
                          item.name.c_str(), item.max_rel_error, item.coords, ok ? "ok" : "FAIL");
            io.out << line;
            if (!ok) {
                failed.push_back(item.name);
            }
        }
        if (!failed.empty()) {
            for (const std::string& name : failed) {
                io.err << "gradcheck: " << name << " exceeds tolerance " << kGradcheckTolerance
                       << "\n";
            }
            return static_cast<int>(kExitGradcheck);
        }
        io.out << "gradcheck: " << items.size() << " items within " << kGradcheckTolerance << "\n";
        return static_cast<int>(kExitOk);
    });
}

} // namespace itnas::cli
