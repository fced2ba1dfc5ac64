#include "stripmlp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace stripmlp::data {

namespace {
constexpr Index kCifarRes = 32;
constexpr Index kCifarRecord = 1 + 3 * kCifarRes * kCifarRes;
}  // namespace

Dataset load_cifar10_bin(const std::vector<std::string>& paths, Index classes) {
    Dataset ds;
    ds.resolution = kCifarRes;
    ds.classes = classes;
    for (const std::string& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw IoError("cannot open dataset file: " + path);
        }
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        if (bytes.size() % kCifarRecord != 0) {
            const std::size_t boundary = (bytes.size() / kCifarRecord) * kCifarRecord;
            throw IoError("truncated record in " + path + " at byte offset " +
                          std::to_string(boundary));
        }
        const std::size_t records = bytes.size() / kCifarRecord;
        for (std::size_t r = 0; r < records; ++r) {
            const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
            const int label = rec[0];
            if (label >= classes) {
                throw DataError("label " + std::to_string(label) + " out of range in " +
                                path + " record " + std::to_string(r));
            }
            ds.labels.push_back(label);
            ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kCifarRecord);
        }
    }
    return ds;
}

void save_cifar10_bin(const std::string& path, const Dataset& ds, Index begin, Index end) {
    if (ds.resolution != kCifarRes) {
        throw ConfigError("CIFAR record layout requires 32x32 images, dataset has " +
                          std::to_string(ds.resolution));
    }
    if (end < 0) {
        end = ds.size();
    }
    if (begin < 0 || begin > end || end > ds.size()) {
        throw UsageError("bad record range for save_cifar10_bin");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    for (Index i = begin; i < end; ++i) {
        const char label = static_cast<char>(ds.labels[static_cast<std::size_t>(i)]);
        out.write(&label, 1);
        out.write(reinterpret_cast<const char*>(ds.image(i)),
                  static_cast<std::streamsize>(ds.image_bytes()));
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

Dataset synthetic_dataset(Index n, Index classes, Index resolution, std::uint64_t seed) {
    if (n < classes || classes < 1) {
        throw ConfigError("synthetic dataset needs at least one sample per class");
    }
    Dataset ds;
    ds.resolution = resolution;
    ds.classes = classes;
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.pixels.resize(static_cast<std::size_t>(n * 3 * resolution * resolution));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> color(0.35, 1.0);
    std::normal_distribution<double> noise(0.0, 0.04);

    // One Gaussian bump per class, centers on a ring, distinct colors.
    const double sigma = static_cast<double>(resolution) / 6.0;
    std::vector<std::array<double, 3>> amplitude(static_cast<std::size_t>(classes));
    std::vector<std::array<double, 2>> center(static_cast<std::size_t>(classes));
    for (Index k = 0; k < classes; ++k) {
        const double angle = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(classes);
        const double mid = static_cast<double>(resolution - 1) / 2.0;
        const double ring = static_cast<double>(resolution) / 4.0;
        center[static_cast<std::size_t>(k)] = {mid + ring * std::cos(angle),
                                               mid + ring * std::sin(angle)};
        for (int c = 0; c < 3; ++c) {
            amplitude[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] = color(rng);
        }
    }

    // Distinct class means, checked at generation time.
    for (Index a = 0; a < classes; ++a) {
        for (Index b = a + 1; b < classes; ++b) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = amplitude[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] -
                                 amplitude[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)];
                d2 += d * d;
            }
            const double dc =
                std::hypot(center[static_cast<std::size_t>(a)][0] - center[static_cast<std::size_t>(b)][0],
                           center[static_cast<std::size_t>(a)][1] - center[static_cast<std::size_t>(b)][1]);
            if (d2 == 0.0 && dc == 0.0) {
                throw NumericError("synthetic class means collide");
            }
        }
    }

    const Index plane = resolution * resolution;
    for (Index i = 0; i < n; ++i) {
        const Index k = i % classes;
        ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
        std::uint8_t* img = ds.pixels.data() + i * 3 * plane;
        const auto& amp = amplitude[static_cast<std::size_t>(k)];
        const auto& ctr = center[static_cast<std::size_t>(k)];
        for (Index y = 0; y < resolution; ++y) {
            for (Index x = 0; x < resolution; ++x) {
                const double dy = static_cast<double>(y) - ctr[1];
                const double dx = static_cast<double>(x) - ctr[0];
                const double bump = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                for (int c = 0; c < 3; ++c) {
                    double v = amp[static_cast<std::size_t>(c)] * bump + noise(rng);
                    v = std::clamp(v, 0.0, 1.0);
                    img[c * plane + y * resolution + x] =
                        static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
            }
        }
    }
    return ds;
}

Image dataset_image(const Dataset& ds, Index i) {
    Image img;
    img.resolution = ds.resolution;
    img.pixels.assign(ds.image(i), ds.image(i) + ds.image_bytes());
    return img;
}

Image crop_shift(const Image& img, Index dy, Index dx, Index pad) {
    if (std::abs(dy) > pad || std::abs(dx) > pad) {
        throw UsageError("crop offset exceeds padding");
    }
    const Index r = img.resolution;
    Image out;
    out.resolution = r;
    out.pixels.assign(img.pixels.size(), 0);
    for (int c = 0; c < 3; ++c) {
        for (Index y = 0; y < r; ++y) {
            const Index sy = y + dy;
            if (sy < 0 || sy >= r) {
                continue;
            }
            for (Index x = 0; x < r; ++x) {
                const Index sx = x + dx;
                if (sx < 0 || sx >= r) {
                    continue;
                }
                out.pixels[static_cast<std::size_t>((c * r + y) * r + x)] =
                    img.pixels[static_cast<std::size_t>((c * r + sy) * r + sx)];
            }
        }
    }
    return out;
}

Image hflip(const Image& img) {
    const Index r = img.resolution;
    Image out;
    out.resolution = r;
    out.pixels.resize(img.pixels.size());
    for (int c = 0; c < 3; ++c) {
        for (Index y = 0; y < r; ++y) {
            for (Index x = 0; x < r; ++x) {
                out.pixels[static_cast<std::size_t>((c * r + y) * r + x)] =
                    img.pixels[static_cast<std::size_t>((c * r + y) * r + (r - 1 - x))];
            }
        }
    }
    return out;
}

Image augment(const Image& img, std::mt19937_64& rng, const AugmentPolicy& policy) {
    if (policy.kind == AugmentPolicy::Kind::None) {
        return img;
    }
    std::uniform_int_distribution<Index> shift(-policy.pad, policy.pad);
    const Index dy = shift(rng);
    const Index dx = shift(rng);
    Image out = crop_shift(img, dy, dx, policy.pad);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < policy.flip_prob) {
        out = hflip(out);
    }
    return out;
}

std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, std::uint64_t seed,
                                              Index epoch) {
    if (batch_size < 1) {
        throw UsageError("batch size must be at least 1");
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Index>> batches;
    for (Index at = 0; at < n; at += batch_size) {
        const Index end = std::min<Index>(at + batch_size, n);
        batches.emplace_back(order.begin() + at, order.begin() + end);
    }
    return batches;
}

Batch make_batch(const Dataset& ds, const std::vector<Index>& indices,
                 const AugmentPolicy& policy, std::mt19937_64& rng,
                 const Normalization& norm) {
    const Index n = static_cast<Index>(indices.size());
    const Index r = ds.resolution;
    Batch batch;
    batch.images = Tensor({n, 3, r, r});
    batch.labels.resize(static_cast<std::size_t>(n));
    double* out = batch.images.mut();
    const Index plane = r * r;
    for (Index i = 0; i < n; ++i) {
        const Index idx = indices[static_cast<std::size_t>(i)];
        batch.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(idx)];
        Image img = augment(dataset_image(ds, idx), rng, policy);
        for (int c = 0; c < 3; ++c) {
            const double mean = norm.mean[static_cast<std::size_t>(c)];
            const double stddev = norm.stddev[static_cast<std::size_t>(c)];
            for (Index s = 0; s < plane; ++s) {
                const double v =
                    static_cast<double>(img.pixels[static_cast<std::size_t>(c * plane + s)]) /
                    255.0;
                out[(i * 3 + c) * plane + s] = (v - mean) / stddev;
            }
        }
    }
    return batch;
}

std::vector<std::vector<double>> class_means(const Dataset& ds) {
    std::vector<std::vector<double>> means(
        static_cast<std::size_t>(ds.classes),
        std::vector<double>(static_cast<std::size_t>(ds.image_bytes()), 0.0));
    std::vector<Index> counts(static_cast<std::size_t>(ds.classes), 0);
    for (Index i = 0; i < ds.size(); ++i) {
        const int k = ds.labels[static_cast<std::size_t>(i)];
        const std::uint8_t* img = ds.image(i);
        auto& acc = means[static_cast<std::size_t>(k)];
        for (Index b = 0; b < ds.image_bytes(); ++b) {
            acc[static_cast<std::size_t>(b)] += static_cast<double>(img[b]) / 255.0;
        }
        ++counts[static_cast<std::size_t>(k)];
    }
    for (Index k = 0; k < ds.classes; ++k) {
        if (counts[static_cast<std::size_t>(k)] > 0) {
            for (double& v : means[static_cast<std::size_t>(k)]) {
                v /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
            }
        }
    }
    return means;
}

}  // namespace stripmlp::data
