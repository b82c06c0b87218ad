#ifndef ITNAS_CLI_CONFIG_HPP
#define ITNAS_CLI_CONFIG_HPP

// Run configuration: one JSON document with sections "supernet", "search",
// "data" and "eval" plus top-level "seed" and "output_dir". Defaults are the
// full-scale values; the toy preset swaps in desk-scale ones. Overrides use
// dotted paths ("search.epochs=3"); values parse as JSON, else as strings.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "itnas/data.hpp"
#include "itnas/search.hpp"
#include "itnas/supernet.hpp"

namespace itnas::cli {

struct DataConfig {
    std::string source = "cifar10"; // "cifar10" or "synthetic"
    std::vector<std::string> cifar10_paths;
    std::size_t limit = 0; // keep the first `limit` samples; 0 keeps all
    data::SyntheticSpec synthetic;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir;
    SuperNetConfig supernet;
    search::SearchConfig search;
    DataConfig data;
    search::RetrainConfig eval;
};

nlohmann::json default_config(bool toy);

// Merges `file` (if any) and then `overrides` into the defaults. Unknown keys
// and type mismatches throw ConfigError naming the dotted field. A config file
// must set "seed".
nlohmann::json merge_config(bool toy, const std::optional<std::filesystem::path>& file,
                            const std::vector<std::string>& overrides);

// Converts and validates (paths must exist); throws ConfigError.
RunConfig to_run_config(const nlohmann::json& doc);

// Canonical text of the effective configuration, and its FNV-1a digest with
// output_dir left out.
std::string config_text(const nlohmann::json& doc);
std::string config_digest(const nlohmann::json& doc);

data::Dataset load_dataset(const DataConfig& config);

} // namespace itnas::cli

#endif // ITNAS_CLI_CONFIG_HPP
