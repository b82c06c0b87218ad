#include "itnas/acceptance/instances.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace itnas::acceptance {

namespace {

using Vec = std::vector<double>;

Vec softmax_of(const Vec& a) {
    const double mx = *std::max_element(a.begin(), a.end());
    Vec out(a.size());
    double total = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        out[k] = std::exp(a[k] - mx);
        total += out[k];
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

std::size_t first_max(const Vec& z) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k) {
        if (z[k] > z[best]) {
            best = k;
        }
    }
    return best;
}

Vec values_of(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

} // namespace

PruneInstance make_instance(std::uint64_t seed, std::size_t num_ops) {
    const CellTopology topology = CellTopology::canonical();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> wide(0.0, 2.0);
    PruneInstance inst;
    inst.num_ops = num_ops;
    for (const EdgeId& e : topology.outer()) {
        Vec logits(num_ops);
        for (double& v : logits) {
            v = wide(rng);
        }
        inst.outer_z.emplace(e, softmax_of(logits));
    }
    inst.params = CellArchParams::init(topology, num_ops, rng, 1.0);
    return inst;
}

OperationSet op_subset(std::size_t num_ops) {
    std::vector<std::string> names = OperationSet::darts_default().names();
    names.resize(num_ops);
    return OperationSet::from_names(names);
}

CellGenotype reference_tiep(const PruneInstance& instance, const OperationSet& op_set) {
    const std::size_t k = instance.num_ops;
    const int first = 2, last = 5;

    // Z[i][j] for the edge (i,j).
    std::map<int, std::map<int, Vec>> z;
    for (const auto& [e, w] : instance.outer_z) {
        z[e.src][e.dst] = w;
    }

    // Parameters of inner edge (i,j): inner edges are numbered by (j, i)
    // ascending and predecessors (m,i) by m ascending.
    std::map<int, std::map<int, std::vector<Vec>>> matrices; // [i][j][m] -> K*K row softmax
    std::map<int, std::map<int, Vec>> scores;                // [i][j] -> attention logits
    std::size_t idx = 0;
    for (int j = first + 1; j <= last; ++j) {
        for (int i = first; i < j; ++i, ++idx) {
            for (int m = 0; m < i; ++m) {
                const Vec raw = values_of(instance.params.transition_logits[idx][m]);
                Vec p(k * k);
                for (std::size_t s = 0; s < k; ++s) {
                    const Vec row = softmax_of(Vec(raw.begin() + s * k, raw.begin() + (s + 1) * k));
                    std::copy(row.begin(), row.end(), p.begin() + s * k);
                }
                matrices[i][j].push_back(p);
            }
            scores[i][j] = values_of(instance.params.attention_logits[idx]);
        }
    }

    // active[i][j][m]: predecessor (m,i) still feeds (i,j).
    std::map<int, std::map<int, std::vector<bool>>> active;
    for (int i = first; i < last; ++i) {
        for (int j = i + 1; j <= last; ++j) {
            active[i][j] = std::vector<bool>(i, true);
        }
    }

    auto derive = [&](int i, int j) {
        const std::vector<bool>& on = active[i][j];
        double mx = -INFINITY;
        for (int m = 0; m < i; ++m) {
            if (on[m]) {
                mx = std::max(mx, scores[i][j][m]);
            }
        }
        Vec beta(i, 0.0);
        double total = 0.0;
        for (int m = 0; m < i; ++m) {
            if (on[m]) {
                beta[m] = std::exp(scores[i][j][m] - mx);
                total += beta[m];
            }
        }
        Vec out(k, 0.0);
        for (int m = 0; m < i; ++m) {
            if (!on[m]) {
                continue;
            }
            const Vec& zin = z[m][i];
            const Vec& p = matrices[i][j][m];
            for (std::size_t t = 0; t < k; ++t) {
                double acc = 0.0;
                for (std::size_t s = 0; s < k; ++s) {
                    acc += zin[s] * p[s * k + t];
                }
                out[t] += beta[m] / total * acc;
            }
        }
        z[i][j] = out;
    };

    // Topology initialization.
    for (int i = first; i < last; ++i) {
        for (int j = i + 1; j <= last; ++j) {
            derive(i, j);
        }
    }

    CellGenotype cell;
    for (int j = first; j <= last; ++j) {
        std::vector<int> alive;
        for (int i = 0; i < j; ++i) {
            alive.push_back(i);
        }
        for (int i = first; i < j; ++i) {
            derive(i, j);
        }
        while (alive.size() > 2) {
            // Lowest importance; on ties the later (higher) source goes.
            int worst = alive[0];
            for (int src : alive) {
                const double a = *std::max_element(z[src][j].begin(), z[src][j].end());
                const double b = *std::max_element(z[worst][j].begin(), z[worst][j].end());
                if (a <= b) {
                    worst = src;
                }
            }
            alive.erase(std::find(alive.begin(), alive.end(), worst));
            for (int l = j + 1; l <= last; ++l) {
                active[j][l][worst] = false;
            }
        }
        std::array<GenotypeEntry, 2> entries;
        for (std::size_t n = 0; n < 2; ++n) {
            const int src = alive[n];
            const std::size_t op = first_max(z[src][j]);
            Vec one_hot(k, 0.0);
            one_hot[op] = 1.0;
            z[src][j] = one_hot;
            entries[n] = GenotypeEntry{src, op_set[op].name};
        }
        cell.nodes.push_back(entries);
    }
    return cell;
}

} // namespace itnas::acceptance
