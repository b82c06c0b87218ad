#ifndef ITNAS_CLI_COMMANDS_HPP
#define ITNAS_CLI_COMMANDS_HPP

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "itnas/pruning.hpp"

namespace itnas::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 1,
    kExitNumeric = 2,
    kExitGradcheck = 3,
};

struct ConfigSource {
    std::optional<std::filesystem::path> file;
    bool toy = false;
    std::vector<std::string> overrides;
    std::optional<std::string> output_dir; // replaces "output_dir" when set
    bool force = false;
};

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

// Each command reports failures on `err` and returns an exit code; none throws.

// Writes arch.ckpt, history.txt and config.echo.json into the output directory.
int cmd_search(const ConfigSource& source, Streams io);

std::optional<pruning::Strategy> parse_strategy(const std::string& name);

// Writes the genotype to `output` (refusing to replace it without `force`).
int cmd_prune(const std::filesystem::path& checkpoint, pruning::Strategy strategy,
              const std::filesystem::path& output, bool force, Streams io);

// Retrains the genotype from scratch on the configured data; prints a text
// report and a JSON record, also written to <output_dir>/eval.json when an
// output directory is configured.
int cmd_eval(const std::filesystem::path& genotype, const ConfigSource& source, Streams io);

// Writes normal.dot and reduction.dot into `output_dir`.
int cmd_export_dot(const std::filesystem::path& genotype, const std::filesystem::path& output_dir,
                   bool force, Streams io);

int cmd_gradcheck(Streams io);

// Creates `dir`, or reuses an existing one only when `force` is set.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

} // namespace itnas::cli

#endif // ITNAS_CLI_COMMANDS_HPP
