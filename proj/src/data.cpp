#include "itnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "itnas/error.hpp"

namespace itnas::data {

std::span<const double> Dataset::sample(std::size_t i) const {
    return std::span<const double>(images).subspan(i * sample_size(), sample_size());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.class_count = class_count;
    out.images.reserve(indices.size() * sample_size());
    for (std::size_t i : indices) {
        if (i >= size()) {
            throw std::out_of_range("dataset index " + std::to_string(i));
        }
        auto s = sample(i);
        out.images.insert(out.images.end(), s.begin(), s.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
    if (indices.empty()) {
        throw std::invalid_argument("empty batch");
    }
    Dataset part = subset(indices);
    return Batch{ad::Tensor({indices.size(), channels, height, width}, std::move(part.images)),
                 std::move(part.labels)};
}

SyntheticSpec SyntheticSpec::easy() { return SyntheticSpec{}; }

Dataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.class_count < 1 || spec.samples_per_class < 1 || spec.channels < 1 ||
        spec.height < 1 || spec.width < 1 || spec.grid < 1 || spec.grid > spec.height ||
        spec.grid > spec.width) {
        throw std::invalid_argument("synthetic dataset extents must be positive");
    }
    if (spec.noise_std < 0.0) {
        throw std::invalid_argument("synthetic noise_std must be non-negative");
    }
    std::mt19937_64 rng(spec.seed);
    Dataset d;
    d.channels = spec.channels;
    d.height = spec.height;
    d.width = spec.width;
    d.class_count = spec.class_count;
    const std::size_t len = d.sample_size();

    // Piecewise constant on a grid x grid partition of every channel plane.
    std::bernoulli_distribution coin(0.5);
    std::vector<std::vector<double>> templates(spec.class_count, std::vector<double>(len));
    for (auto& t : templates) {
        std::vector<double> cells(spec.channels * spec.grid * spec.grid);
        for (double& v : cells) {
            v = coin(rng) ? spec.contrast : -spec.contrast;
        }
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            for (std::size_t y = 0; y < spec.height; ++y) {
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const std::size_t gy = y * spec.grid / spec.height;
                    const std::size_t gx = x * spec.grid / spec.width;
                    t[(ch * spec.height + y) * spec.width + x] =
                        cells[(ch * spec.grid + gy) * spec.grid + gx];
                }
            }
        }
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    d.images.reserve(spec.class_count * spec.samples_per_class * len);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            for (std::size_t i = 0; i < len; ++i) {
                d.images.push_back(templates[c][i] + spec.noise_std * noise(rng));
            }
            d.labels.push_back(static_cast<int>(c));
        }
    }
    if (spec.random_labels) {
        std::uniform_int_distribution<int> label(0, static_cast<int>(spec.class_count) - 1);
        for (int& y : d.labels) {
            y = label(rng);
        }
    }
    normalize_per_channel(d);
    return d;
}

void normalize_per_channel(Dataset& d) {
    const std::size_t plane = d.height * d.width;
    const double count = static_cast<double>(d.size() * plane);
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
        auto for_channel = [&](auto&& fn) {
            for (std::size_t n = 0; n < d.size(); ++n) {
                double* p = d.images.data() + (n * d.channels + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    fn(p[i]);
                }
            }
        };
        double mean = 0.0;
        for_channel([&](double& v) { mean += v; });
        mean /= count;
        double var = 0.0;
        for_channel([&](double& v) { var += (v - mean) * (v - mean); });
        var /= count;
        const double inv_std = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
        for_channel([&](double& v) { v = (v - mean) * inv_std; });
    }
}

Dataset read_cifar10_binary(const std::vector<std::filesystem::path>& paths) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.class_count = 10;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw FormatError(path.string() + ": cannot open");
        }
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        if (bytes.size() % kRecord != 0) {
            throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                              " is not a multiple of " + std::to_string(kRecord));
        }
        const std::size_t records = bytes.size() / kRecord;
        for (std::size_t r = 0; r < records; ++r) {
            const unsigned char* rec = bytes.data() + r * kRecord;
            if (rec[0] > 9) {
                throw FormatError(path.string() + ": record " + std::to_string(r) +
                                  " has label " + std::to_string(rec[0]));
            }
            d.labels.push_back(rec[0]);
            for (std::size_t i = 0; i < kPixels; ++i) {
                d.images.push_back(static_cast<double>(rec[1 + i]) / 255.0);
            }
        }
    }
    normalize_per_channel(d);
    return d;
}

std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t seed, std::size_t epoch) {
    if (batch_size == 0) {
        throw std::invalid_argument("batch_size must be >= 1");
    }
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < dataset_size; start += batch_size) {
        const std::size_t end = std::min(dataset_size, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

} // namespace itnas::data
