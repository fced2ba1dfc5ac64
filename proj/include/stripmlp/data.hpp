#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stripmlp/tensor.hpp"

namespace stripmlp::data {

//! Images as raw 8-bit CHW pixels (R plane, G plane, B plane), the same
//! layout the CIFAR-10 binary format uses. Normalization happens at
//! batch-assembly time so ingestion stays lossless.
struct Dataset {
    Index resolution = 32;
    Index classes = 10;
    std::vector<std::uint8_t> pixels;  // size() * 3 * resolution^2
    std::vector<int> labels;

    Index size() const { return static_cast<Index>(labels.size()); }
    Index image_bytes() const { return 3 * resolution * resolution; }
    const std::uint8_t* image(Index i) const { return pixels.data() + i * image_bytes(); }
};

struct Normalization {
    std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
    std::array<double, 3> stddev{0.2470, 0.2435, 0.2616};
};

struct Batch {
    Tensor images;  // (N,3,R,R), normalized
    std::vector<int> labels;
};

//! CIFAR-10 binary records: 1 label byte + 3072 pixel bytes.
Dataset load_cifar10_bin(const std::vector<std::string>& paths, Index classes = 10);
//! Serialize [begin, end) records in the same byte layout (32x32 only).
void save_cifar10_bin(const std::string& path, const Dataset& ds, Index begin = 0,
                      Index end = -1);

//! Class-conditional Gaussian blobs, deterministic in the seed; labels
//! are assigned round-robin.
Dataset synthetic_dataset(Index n, Index classes, Index resolution, std::uint64_t seed);

struct AugmentPolicy {
    enum class Kind { None, Basic };
    Kind kind = Kind::None;
    Index pad = 4;
    double flip_prob = 0.5;
};

//! View of one image for augmentation.
struct Image {
    Index resolution = 0;
    std::vector<std::uint8_t> pixels;  // 3 * resolution^2, CHW
};

Image dataset_image(const Dataset& ds, Index i);
//! Zero-padded crop; offsets in [-pad, pad], (0,0) reproduces the input.
Image crop_shift(const Image& img, Index dy, Index dx, Index pad);
Image hflip(const Image& img);
//! Basic policy: pad-4 random crop then horizontal flip with flip_prob.
Image augment(const Image& img, std::mt19937_64& rng, const AugmentPolicy& policy);

//! Deterministic epoch permutation chunked into batches; the last partial
//! batch is kept.
std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size,
                                              std::uint64_t seed, Index epoch);

Batch make_batch(const Dataset& ds, const std::vector<Index>& indices,
                 const AugmentPolicy& policy, std::mt19937_64& rng,
                 const Normalization& norm);

//! Mean image of every class, for separation checks.
std::vector<std::vector<double>> class_means(const Dataset& ds);

}  // namespace stripmlp::data
