#include "itnas/genotype_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "itnas/error.hpp"

namespace itnas::io {

using json = nlohmann::json;

namespace {

json cell_to_json(const CellGenotype& cell) {
    json nodes = json::array();
    for (const auto& pair : cell.nodes) {
        json entries = json::array();
        for (const GenotypeEntry& e : pair) {
            entries.push_back(json{{"op", e.op}, {"source", e.source}});
        }
        nodes.push_back(std::move(entries));
    }
    return nodes;
}

std::vector<ValidationIssue> validate_json(const json& doc) {
    std::vector<ValidationIssue> issues;
    auto issue = [&](std::string loc, std::string msg) {
        issues.push_back({std::move(loc), std::move(msg)});
    };
    if (!doc.is_object()) {
        issue("$", "document is not an object");
        return issues;
    }
    if (!doc.contains("schema_version") || !doc["schema_version"].is_number_integer() ||
        doc["schema_version"].get<int>() != kGenotypeSchemaVersion) {
        issue("schema_version", "expected " + std::to_string(kGenotypeSchemaVersion));
    }

    std::vector<std::string> known = OperationSet::known_names();
    std::set<std::string> allowed(known.begin(), known.end());
    if (doc.contains("op_set")) {
        const json& ops = doc["op_set"];
        if (!ops.is_array() || ops.size() < 2) {
            issue("op_set", "must be an array of at least two operation names");
        } else {
            std::set<std::string> listed;
            for (std::size_t k = 0; k < ops.size(); ++k) {
                const std::string loc = "op_set[" + std::to_string(k) + "]";
                if (!ops[k].is_string()) {
                    issue(loc, "not a string");
                    continue;
                }
                const std::string name = ops[k].get<std::string>();
                if (!allowed.contains(name)) {
                    issue(loc, "unknown operation '" + name + "'");
                }
                if (!listed.insert(name).second) {
                    issue(loc, "duplicate operation '" + name + "'");
                }
            }
            allowed = listed;
        }
    } else {
        issue("op_set", "missing");
    }

    if (doc.contains("provenance")) {
        const json& p = doc["provenance"];
        if (!p.is_object() || !p.contains("seed") || !p["seed"].is_number_unsigned() ||
            !p.contains("config_digest") || !p["config_digest"].is_string()) {
            issue("provenance", "expected {seed: unsigned, config_digest: string}");
        }
    } else {
        issue("provenance", "missing");
    }

    for (const char* kind : {"normal", "reduction"}) {
        if (!doc.contains(kind) || !doc[kind].is_array()) {
            issue(kind, "missing node list");
            continue;
        }
        const json& nodes = doc[kind];
        if (nodes.size() != 4) {
            issue(kind, "expected 4 intermediate nodes, got " + std::to_string(nodes.size()));
        }
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            const int target = static_cast<int>(k) + 2;
            const std::string node_loc =
                std::string(kind) + ".node " + std::to_string(target);
            const json& entries = nodes[k];
            if (!entries.is_array() || entries.size() != 2) {
                issue(node_loc, "expected exactly 2 incoming edges");
                continue;
            }
            std::set<int> sources;
            for (std::size_t e = 0; e < entries.size(); ++e) {
                const json& entry = entries[e];
                const std::string loc = node_loc + " entry " + std::to_string(e);
                if (!entry.is_object() || !entry.contains("source") ||
                    !entry["source"].is_number_integer() || !entry.contains("op") ||
                    !entry["op"].is_string()) {
                    issue(loc, "expected {op: string, source: integer}");
                    continue;
                }
                const int src = entry["source"].get<int>();
                const std::string op = entry["op"].get<std::string>();
                const std::string edge =
                    "edge (" + std::to_string(src) + "," + std::to_string(target) + ")";
                if (src < 0 || src >= target) {
                    issue(loc, edge + ": source must be in [0," + std::to_string(target) + ")");
                }
                if (!sources.insert(src).second) {
                    issue(loc, edge + ": duplicate source");
                }
                if (!allowed.contains(op)) {
                    issue(loc, edge + ": unknown operation '" + op + "'");
                }
            }
        }
    }
    return issues;
}

std::string format_issues(const std::vector<ValidationIssue>& issues) {
    std::string out = "invalid genotype:";
    for (const ValidationIssue& i : issues) {
        out += "\n  " + i.location + ": " + i.message;
    }
    return out;
}

CellGenotype cell_from_json(const json& nodes) {
    CellGenotype cell;
    for (const json& entries : nodes) {
        std::array<GenotypeEntry, 2> pair;
        for (std::size_t e = 0; e < 2; ++e) {
            pair[e] = GenotypeEntry{entries[e]["source"].get<int>(),
                                    entries[e]["op"].get<std::string>()};
        }
        cell.nodes.push_back(pair);
    }
    return cell;
}

void put_le(std::ostream& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) {
        bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    out.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) {
        bits = (bits << 8) | bytes[b];
    }
    return std::bit_cast<double>(bits);
}

std::string edge_key(EdgeId e) { return std::to_string(e.src) + "_" + std::to_string(e.dst); }

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

} // namespace

std::string serialize_genotype(const Genotype& genotype) {
    json doc;
    doc["schema_version"] = kGenotypeSchemaVersion;
    doc["normal"] = cell_to_json(genotype.normal);
    doc["reduction"] = cell_to_json(genotype.reduction);
    doc["op_set"] = genotype.op_set;
    doc["provenance"] = json{{"config_digest", genotype.provenance.config_digest},
                             {"seed", genotype.provenance.seed}};
    return doc.dump(2) + "\n";
}

std::vector<ValidationIssue> validate_document(std::string_view text) {
    json doc = json::parse(text.begin(), text.end(), nullptr, false);
    if (doc.is_discarded()) {
        return {{"$", "not valid JSON"}};
    }
    return validate_json(doc);
}

std::vector<ValidationIssue> validate(const Genotype& genotype) {
    return validate_document(serialize_genotype(genotype));
}

Genotype parse_genotype(std::string_view text) {
    json doc = json::parse(text.begin(), text.end(), nullptr, false);
    if (doc.is_discarded()) {
        throw FormatError("invalid genotype: not valid JSON");
    }
    const auto issues = validate_json(doc);
    if (!issues.empty()) {
        throw FormatError(format_issues(issues));
    }
    Genotype g;
    g.normal = cell_from_json(doc["normal"]);
    g.reduction = cell_from_json(doc["reduction"]);
    g.op_set = doc["op_set"].get<std::vector<std::string>>();
    g.provenance.seed = doc["provenance"]["seed"].get<std::uint64_t>();
    g.provenance.config_digest = doc["provenance"]["config_digest"].get<std::string>();
    return g;
}

std::string to_dot(const CellGenotype& cell, CellKind kind) {
    auto node_name = [&](int n) -> std::string {
        if (n == 0) {
            return "\"c_{k-2}\"";
        }
        if (n == 1) {
            return "\"c_{k-1}\"";
        }
        return "\"" + std::to_string(n - 2) + "\"";
    };
    std::ostringstream os;
    os << "digraph " << cell_kind_name(kind) << " {\n";
    os << "  rankdir=LR;\n";
    os << "  node [shape=box];\n";
    os << "  \"c_{k-2}\";\n  \"c_{k-1}\";\n";
    for (std::size_t k = 0; k < cell.nodes.size(); ++k) {
        os << "  \"" << k << "\";\n";
    }
    os << "  \"c_{k}\";\n";
    for (std::size_t k = 0; k < cell.nodes.size(); ++k) {
        for (const GenotypeEntry& e : cell.nodes[k]) {
            os << "  " << node_name(e.source) << " -> \"" << k << "\" [label=\"" << e.op
               << "\"];\n";
        }
    }
    for (std::size_t k = 0; k < cell.nodes.size(); ++k) {
        os << "  \"" << k << "\" -> \"c_{k}\";\n";
    }
    os << "}\n";
    return os.str();
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string genotype_digest(const Genotype& genotype) {
    return fnv1a_hex(serialize_genotype(genotype));
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const CheckpointTensor& t : tensors) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out << "itnas-checkpoint 1\n";
    out << "kind " << ckpt.kind << "\n";
    for (const auto& [key, value] : ckpt.meta) {
        if (key.find_first_of(" \n") != std::string::npos ||
            value.find('\n') != std::string::npos) {
            throw FormatError("checkpoint meta '" + key + "' contains a separator");
        }
        out << "meta " << key << " " << value << "\n";
    }
    std::size_t count = 0;
    for (const CheckpointTensor& t : ckpt.tensors) {
        if (ad::shape_numel(t.shape) != t.values.size()) {
            throw FormatError("checkpoint tensor '" + t.name + "' shape does not match values");
        }
        out << "tensor " << t.name << " " << t.shape.size();
        for (std::size_t d : t.shape) {
            out << " " << d;
        }
        out << "\n";
        count += t.values.size();
    }
    out << "payload " << count * 8 << "\n";
    for (const CheckpointTensor& t : ckpt.tensors) {
        for (double v : t.values) {
            put_le(out, v);
        }
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    Checkpoint ckpt;
    std::string line;
    if (!std::getline(in, line) || line != "itnas-checkpoint 1") {
        throw FormatError("checkpoint: bad magic line");
    }
    std::size_t payload = 0;
    bool saw_payload = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "kind") {
            ls >> ckpt.kind;
        } else if (tag == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') {
                value.erase(0, 1);
            }
            ckpt.meta[key] = value;
        } else if (tag == "tensor") {
            CheckpointTensor t;
            std::size_t rank = 0;
            if (!(ls >> t.name >> rank)) {
                throw FormatError("checkpoint: malformed tensor line '" + line + "'");
            }
            for (std::size_t r = 0; r < rank; ++r) {
                std::size_t d = 0;
                if (!(ls >> d) || d == 0) {
                    throw FormatError("checkpoint: malformed shape for '" + t.name + "'");
                }
                t.shape.push_back(d);
            }
            ckpt.tensors.push_back(std::move(t));
        } else if (tag == "payload") {
            if (!(ls >> payload)) {
                throw FormatError("checkpoint: malformed payload line");
            }
            saw_payload = true;
            break;
        } else {
            throw FormatError("checkpoint: unexpected line '" + line + "'");
        }
    }
    if (!saw_payload) {
        throw FormatError("checkpoint: missing payload");
    }
    std::size_t expected = 0;
    for (const CheckpointTensor& t : ckpt.tensors) {
        expected += ad::shape_numel(t.shape) * 8;
    }
    if (expected != payload) {
        throw FormatError("checkpoint: payload size " + std::to_string(payload) +
                          " does not match manifest (" + std::to_string(expected) + ")");
    }
    std::vector<unsigned char> bytes(payload);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(payload));
    if (static_cast<std::size_t>(in.gcount()) != payload) {
        throw FormatError("checkpoint: truncated payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("checkpoint: trailing bytes after payload");
    }
    std::size_t offset = 0;
    for (CheckpointTensor& t : ckpt.tensors) {
        const std::size_t n = ad::shape_numel(t.shape);
        t.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            t.values[i] = get_le(bytes.data() + offset);
            offset += 8;
        }
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(path.string() + ": cannot open for writing");
    }
    write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path.string() + ": cannot open");
    }
    return read_checkpoint(in);
}

Checkpoint arch_to_checkpoint(const ArchParams& arch, const CellTopology& topology,
                              const OperationSet& op_set,
                              const std::map<std::string, std::string>& meta) {
    Checkpoint ckpt;
    ckpt.kind = "arch";
    ckpt.meta = meta;
    ckpt.meta["num_ops"] = std::to_string(arch.num_ops);
    ckpt.meta["op_set"] = join(op_set.names(), ',');
    auto put = [&](std::string name, const ad::Tensor& t) {
        ckpt.tensors.push_back({std::move(name), t.shape(), {t.values().begin(), t.values().end()}});
    };
    for (CellKind kind : {CellKind::Normal, CellKind::Reduction}) {
        const CellArchParams& p = arch.cell(kind);
        const std::string prefix(cell_kind_name(kind));
        for (std::size_t k = 0; k < topology.outer().size(); ++k) {
            put(prefix + ".outer." + edge_key(topology.outer()[k]), p.outer_logits.at(k));
        }
        for (std::size_t k = 0; k < topology.inner().size(); ++k) {
            const EdgeId e = topology.inner()[k];
            auto preds = topology.predecessors(e);
            for (std::size_t m = 0; m < preds.size(); ++m) {
                put(prefix + ".transition." + std::to_string(preds[m].src) + "_" + edge_key(e),
                    p.transition_logits.at(k).at(m));
            }
            put(prefix + ".attention." + edge_key(e), p.attention_logits.at(k));
        }
    }
    return ckpt;
}

OperationSet op_set_from_checkpoint(const Checkpoint& ckpt) {
    auto it = ckpt.meta.find("op_set");
    if (it == ckpt.meta.end()) {
        throw FormatError("checkpoint: missing op_set metadata");
    }
    std::vector<std::string> names;
    std::stringstream ss(it->second);
    std::string name;
    while (std::getline(ss, name, ',')) {
        names.push_back(name);
    }
    try {
        return OperationSet::from_names(names);
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

ArchParams arch_from_checkpoint(const Checkpoint& ckpt, const CellTopology& topology) {
    if (ckpt.kind != "arch") {
        throw FormatError("checkpoint kind is '" + ckpt.kind + "', expected 'arch'");
    }
    const std::size_t k = op_set_from_checkpoint(ckpt).size();
    std::mt19937_64 unused(0);
    ArchParams arch = ArchParams::init(topology, k, unused, 0.0);
    const Checkpoint layout = arch_to_checkpoint(arch, topology, op_set_from_checkpoint(ckpt));
    if (layout.tensors.size() != ckpt.tensors.size()) {
        throw FormatError("checkpoint: expected " + std::to_string(layout.tensors.size()) +
                          " architecture tensors, found " + std::to_string(ckpt.tensors.size()));
    }
    std::map<std::string, ad::Tensor> by_name;
    {
        for (CellKind kind : {CellKind::Normal, CellKind::Reduction}) {
            CellArchParams& p = arch.cell(kind);
            const std::string prefix(cell_kind_name(kind));
            for (std::size_t o = 0; o < topology.outer().size(); ++o) {
                by_name[prefix + ".outer." + edge_key(topology.outer()[o])] = p.outer_logits[o];
            }
            for (std::size_t i = 0; i < topology.inner().size(); ++i) {
                const EdgeId e = topology.inner()[i];
                auto preds = topology.predecessors(e);
                for (std::size_t m = 0; m < preds.size(); ++m) {
                    by_name[prefix + ".transition." + std::to_string(preds[m].src) + "_" +
                            edge_key(e)] = p.transition_logits[i][m];
                }
                by_name[prefix + ".attention." + edge_key(e)] = p.attention_logits[i];
            }
        }
    }
    for (const CheckpointTensor& t : ckpt.tensors) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint: unexpected tensor '" + t.name + "'");
        }
        if (it->second.shape() != t.shape) {
            throw FormatError("checkpoint: tensor '" + t.name + "' has shape " +
                              ad::shape_to_string(t.shape) + ", expected " +
                              ad::shape_to_string(it->second.shape()));
        }
        auto dst = it->second.mutable_values();
        std::copy(t.values.begin(), t.values.end(), dst.begin());
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw FormatError("checkpoint: missing tensor '" + by_name.begin()->first + "'");
    }
    return arch;
}

Checkpoint weights_to_checkpoint(const Network& net,
                                 const std::map<std::string, std::string>& meta) {
    Checkpoint ckpt;
    ckpt.kind = "weights";
    ckpt.meta = meta;
    for (const auto& [name, t] : net.named_parameters()) {
        ckpt.tensors.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
    }
    return ckpt;
}

void load_weights(const Checkpoint& ckpt, Network& net) {
    if (ckpt.kind != "weights") {
        throw FormatError("checkpoint kind is '" + ckpt.kind + "', expected 'weights'");
    }
    auto params = net.named_parameters();
    if (params.size() != ckpt.tensors.size()) {
        throw FormatError("checkpoint: expected " + std::to_string(params.size()) +
                          " tensors, found " + std::to_string(ckpt.tensors.size()));
    }
    for (auto& [name, t] : params) {
        const CheckpointTensor* src = ckpt.find(name);
        if (!src) {
            throw FormatError("checkpoint: missing tensor '" + name + "'");
        }
        if (src->shape != t.shape()) {
            throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                              ad::shape_to_string(src->shape));
        }
        auto dst = t.mutable_values();
        std::copy(src->values.begin(), src->values.end(), dst.begin());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path.string() + ": cannot open");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError(path.string() + ": cannot open for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

} // namespace itnas::io
