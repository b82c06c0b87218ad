#ifndef ITNAS_DATA_HPP
#define ITNAS_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "itnas/tensor.hpp"

namespace itnas::data {

struct Batch {
    ad::Tensor images; // [N, C, H, W]
    std::vector<int> labels;
};

// Images stored as [N, C, H, W] row-major.
struct Dataset {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t class_count = 0;
    std::vector<double> images;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_size() const { return channels * height * width; }
    std::span<const double> sample(std::size_t i) const;

    Dataset subset(std::span<const std::size_t> indices) const;
    Batch batch(std::span<const std::size_t> indices) const;
};

struct SyntheticSpec {
    std::size_t class_count = 4;
    std::size_t samples_per_class = 64;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 3;
    std::size_t grid = 2;   // template blocks per side
    double contrast = 1.0;  // template values are +-contrast
    double noise_std = 0.1; // additive Gaussian noise
    std::uint64_t seed = 0;
    bool random_labels = false; // labels drawn independently of the images

    // 4 classes, contrast 1.0, noise 0.1.
    static SyntheticSpec easy();
};

// Class templates are seeded +-contrast block patterns; samples add Gaussian
// noise.
// The result is normalized per channel.
Dataset gen_synthetic(const SyntheticSpec& spec);

// Per-channel mean 0, unit (population) variance over the whole set.
void normalize_per_channel(Dataset& d);

// CIFAR-10 binary batches: 3073-byte records (label byte + 3x32x32 channel-major
// pixels). Pixels are scaled to [0, 1] and then normalized.
Dataset read_cifar10_binary(const std::vector<std::filesystem::path>& paths);

// Index batches for one epoch: a shuffle seeded by (seed, epoch); the last
// batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t seed, std::size_t epoch);

} // namespace itnas::data

#endif // ITNAS_DATA_HPP
