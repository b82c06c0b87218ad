#include "itnas/cli/config.hpp"

#include <fstream>

#include "itnas/error.hpp"
#include "itnas/genotype_io.hpp"

namespace itnas::cli {

using json = nlohmann::json;

namespace {

bool compatible(const json& def, const json& value) {
    if (def.is_number_unsigned()) {
        return value.is_number_unsigned() ||
               (value.is_number_integer() && value.get<std::int64_t>() >= 0);
    }
    if (def.is_number()) {
        return value.is_number();
    }
    return def.type() == value.type();
}

void merge_into(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) {
        throw ConfigError((prefix.empty() ? std::string("configuration") : prefix) +
                          ": expected an object");
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string field = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError(field + ": unknown field");
        }
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_into(slot, it.value(), field);
        } else if (!compatible(slot, it.value())) {
            throw ConfigError(field + ": expected " + std::string(slot.type_name()) + ", got " +
                              it.value().type_name());
        } else {
            slot = it.value();
        }
    }
}

json parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + text + "': expected key.path=value");
    }
    const std::string path = text.substr(0, eq);
    const std::string raw = text.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    json patch = value;
    std::size_t end = path.size();
    while (true) {
        const auto dot = path.rfind('.', end - 1);
        const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
        const std::string key = path.substr(start, end - start);
        if (key.empty()) {
            throw ConfigError("override '" + text + "': empty path component");
        }
        patch = json{{key, patch}};
        if (dot == std::string::npos) {
            break;
        }
        end = dot;
    }
    return patch;
}

template <typename T>
T field(const json& doc, const std::string& dotted) {
    const json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
        if (!node->is_object() || !node->contains(key)) {
            throw ConfigError(dotted + ": missing");
        }
        node = &(*node)[key];
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    try {
        return node->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(dotted + ": wrong type");
    }
}

void require_match(std::size_t a, std::size_t b, const std::string& what) {
    if (a != b) {
        throw ConfigError(what + " (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

} // namespace

json default_config(bool toy) {
    json doc;
    doc["seed"] = std::uint64_t{0};
    doc["output_dir"] = "";

    const SuperNetConfig net = toy ? SuperNetConfig::toy() : SuperNetConfig{};
    doc["supernet"] = {{"num_cells", net.num_cells},
                       {"reduction_positions", net.reduction_positions},
                       {"init_channels", net.init_channels},
                       {"num_classes", net.num_classes},
                       {"input_channels", net.input_channels},
                       {"input_height", net.input_height},
                       {"input_width", net.input_width},
                       {"op_set", net.op_set.names()}};

    search::SearchConfig s;
    if (toy) {
        s.epochs = 5;
        s.batch_size = 16;
    }
    doc["search"] = {{"epochs", s.epochs},
                     {"batch_size", s.batch_size},
                     {"weight_lr_start", s.weight_lr_start},
                     {"weight_lr_end", s.weight_lr_end},
                     {"weight_momentum", s.weight_momentum},
                     {"weight_decay", s.weight_decay},
                     {"arch_lr", s.arch_lr},
                     {"arch_weight_decay", s.arch_weight_decay},
                     {"arch_beta1", s.arch_beta1},
                     {"arch_beta2", s.arch_beta2},
                     {"arch_eps", s.arch_eps},
                     {"arch_init_std", s.arch_init_std},
                     {"tau_start", s.tau_start},
                     {"tau_end", s.tau_end}};

    const data::SyntheticSpec syn = data::SyntheticSpec::easy();
    doc["data"] = {{"source", toy ? "synthetic" : "cifar10"},
                   {"cifar10_paths", json::array()},
                   {"limit", std::size_t{0}},
                   {"synthetic",
                    {{"class_count", syn.class_count},
                     {"samples_per_class", syn.samples_per_class},
                     {"height", syn.height},
                     {"width", syn.width},
                     {"channels", syn.channels},
                     {"grid", syn.grid},
                     {"contrast", syn.contrast},
                     {"noise_std", syn.noise_std},
                     {"seed", syn.seed},
                     {"random_labels", syn.random_labels}}}};

    search::RetrainConfig e;
    if (toy) {
        e.epochs = 10;
        e.batch_size = 16;
        e.lr_start = 0.1;
    } else {
        e.epochs = 600;
        e.batch_size = 96;
    }
    doc["eval"] = {{"epochs", e.epochs},         {"batch_size", e.batch_size},
                   {"lr_start", e.lr_start},     {"lr_end", e.lr_end},
                   {"momentum", e.momentum},     {"weight_decay", e.weight_decay}};
    return doc;
}

json merge_config(bool toy, const std::optional<std::filesystem::path>& file,
                  const std::vector<std::string>& overrides) {
    json doc = default_config(toy);
    if (file) {
        std::ifstream in(*file);
        if (!in) {
            throw ConfigError("config file " + file->string() + ": cannot open");
        }
        json user = json::parse(in, nullptr, false);
        if (user.is_discarded()) {
            throw ConfigError("config file " + file->string() + ": not valid JSON");
        }
        if (!user.is_object() || !user.contains("seed")) {
            throw ConfigError("seed: missing (a config file must set the seed explicitly)");
        }
        merge_into(doc, user, "");
    }
    for (const std::string& o : overrides) {
        merge_into(doc, parse_override(o), "");
    }
    return doc;
}

RunConfig to_run_config(const json& doc) {
    RunConfig rc;
    rc.seed = field<std::uint64_t>(doc, "seed");
    rc.output_dir = field<std::string>(doc, "output_dir");

    SuperNetConfig& net = rc.supernet;
    net.num_cells = field<int>(doc, "supernet.num_cells");
    net.reduction_positions = field<std::vector<int>>(doc, "supernet.reduction_positions");
    net.init_channels = field<std::size_t>(doc, "supernet.init_channels");
    net.num_classes = field<std::size_t>(doc, "supernet.num_classes");
    net.input_channels = field<std::size_t>(doc, "supernet.input_channels");
    net.input_height = field<std::size_t>(doc, "supernet.input_height");
    net.input_width = field<std::size_t>(doc, "supernet.input_width");
    try {
        net.op_set = OperationSet::from_names(field<std::vector<std::string>>(doc, "supernet.op_set"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("supernet.op_set: ") + e.what());
    }
    net.validate();

    search::SearchConfig& s = rc.search;
    s.epochs = field<std::size_t>(doc, "search.epochs");
    s.batch_size = field<std::size_t>(doc, "search.batch_size");
    s.weight_lr_start = field<double>(doc, "search.weight_lr_start");
    s.weight_lr_end = field<double>(doc, "search.weight_lr_end");
    s.weight_momentum = field<double>(doc, "search.weight_momentum");
    s.weight_decay = field<double>(doc, "search.weight_decay");
    s.arch_lr = field<double>(doc, "search.arch_lr");
    s.arch_weight_decay = field<double>(doc, "search.arch_weight_decay");
    s.arch_beta1 = field<double>(doc, "search.arch_beta1");
    s.arch_beta2 = field<double>(doc, "search.arch_beta2");
    s.arch_eps = field<double>(doc, "search.arch_eps");
    s.arch_init_std = field<double>(doc, "search.arch_init_std");
    s.tau_start = field<double>(doc, "search.tau_start");
    s.tau_end = field<double>(doc, "search.tau_end");
    s.seed = rc.seed;
    s.validate();

    DataConfig& d = rc.data;
    d.source = field<std::string>(doc, "data.source");
    d.cifar10_paths = field<std::vector<std::string>>(doc, "data.cifar10_paths");
    d.limit = field<std::size_t>(doc, "data.limit");
    data::SyntheticSpec& syn = d.synthetic;
    syn.class_count = field<std::size_t>(doc, "data.synthetic.class_count");
    syn.samples_per_class = field<std::size_t>(doc, "data.synthetic.samples_per_class");
    syn.height = field<std::size_t>(doc, "data.synthetic.height");
    syn.width = field<std::size_t>(doc, "data.synthetic.width");
    syn.channels = field<std::size_t>(doc, "data.synthetic.channels");
    syn.grid = field<std::size_t>(doc, "data.synthetic.grid");
    syn.contrast = field<double>(doc, "data.synthetic.contrast");
    syn.noise_std = field<double>(doc, "data.synthetic.noise_std");
    syn.seed = field<std::uint64_t>(doc, "data.synthetic.seed");
    syn.random_labels = field<bool>(doc, "data.synthetic.random_labels");
    if (d.source == "cifar10") {
        if (d.cifar10_paths.empty()) {
            throw ConfigError("data.cifar10_paths: no dataset path given");
        }
        for (const std::string& p : d.cifar10_paths) {
            if (!std::filesystem::exists(p)) {
                throw ConfigError("data.cifar10_paths: " + p + " does not exist");
            }
        }
        require_match(net.input_channels, 3, "supernet.input_channels must be 3 for CIFAR-10");
        require_match(net.input_height, 32, "supernet.input_height must be 32 for CIFAR-10");
        require_match(net.input_width, 32, "supernet.input_width must be 32 for CIFAR-10");
        require_match(net.num_classes, 10, "supernet.num_classes must be 10 for CIFAR-10");
    } else if (d.source == "synthetic") {
        if (syn.class_count < 1 || syn.samples_per_class < 1 || syn.grid < 1 ||
            syn.grid > syn.height || syn.grid > syn.width || syn.noise_std < 0.0) {
            throw ConfigError("data.synthetic: invalid generator settings");
        }
        require_match(net.input_channels, syn.channels,
                      "data.synthetic.channels must match supernet.input_channels");
        require_match(net.input_height, syn.height,
                      "data.synthetic.height must match supernet.input_height");
        require_match(net.input_width, syn.width,
                      "data.synthetic.width must match supernet.input_width");
        require_match(net.num_classes, syn.class_count,
                      "data.synthetic.class_count must match supernet.num_classes");
    } else {
        throw ConfigError("data.source: expected \"cifar10\" or \"synthetic\", got \"" +
                          d.source + "\"");
    }

    search::RetrainConfig& e = rc.eval;
    e.epochs = field<std::size_t>(doc, "eval.epochs");
    e.batch_size = field<std::size_t>(doc, "eval.batch_size");
    e.lr_start = field<double>(doc, "eval.lr_start");
    e.lr_end = field<double>(doc, "eval.lr_end");
    e.momentum = field<double>(doc, "eval.momentum");
    e.weight_decay = field<double>(doc, "eval.weight_decay");
    e.seed = rc.seed;
    e.validate();
    return rc;
}

std::string config_text(const json& doc) { return doc.dump(2) + "\n"; }

std::string config_digest(const json& doc) {
    json identity = doc;
    identity.erase("output_dir"); // where results go does not change them
    return io::fnv1a_hex(config_text(identity));
}

data::Dataset load_dataset(const DataConfig& config) {
    data::Dataset d;
    if (config.source == "synthetic") {
        d = data::gen_synthetic(config.synthetic);
    } else {
        std::vector<std::filesystem::path> paths(config.cifar10_paths.begin(),
                                                 config.cifar10_paths.end());
        d = data::read_cifar10_binary(paths);
    }
    if (config.limit > 0 && config.limit < d.size()) {
        std::vector<std::size_t> keep(config.limit);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            keep[i] = i;
        }
        d = d.subset(keep);
    }
    return d;
}

} // namespace itnas::cli
