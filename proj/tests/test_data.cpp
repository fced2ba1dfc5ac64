#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "stripmlp/data.hpp"

using namespace stripmlp;
namespace dt = stripmlp::data;

namespace {

const char* kTmp = "/tmp/stripmlp_test_data.bin";

void write_bytes(const char* path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("cifar ingestion: round trip, framing, label range") {
    SUBCASE("two-record synthetic file keeps labels 3 and 7") {
        std::vector<std::uint8_t> bytes;
        for (int label : {3, 7}) {
            bytes.push_back(static_cast<std::uint8_t>(label));
            for (int i = 0; i < 3072; ++i) {
                bytes.push_back(static_cast<std::uint8_t>((i + label) & 0xFF));
            }
        }
        write_bytes(kTmp, bytes);
        dt::Dataset ds = dt::load_cifar10_bin({kTmp});
        REQUIRE(ds.size() == 2);
        CHECK(ds.labels[0] == 3);
        CHECK(ds.labels[1] == 7);

        // ingestion then re-serialization reproduces the original bytes
        dt::save_cifar10_bin(kTmp, ds);
        std::ifstream in(kTmp, std::ios::binary);
        std::vector<std::uint8_t> back((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
        CHECK(back == bytes);
    }

    SUBCASE("3072-byte file reports a truncated record at offset 0") {
        write_bytes(kTmp, std::vector<std::uint8_t>(3072, 1));
        try {
            dt::load_cifar10_bin({kTmp});
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
        }
    }

    SUBCASE("label out of range is a data error") {
        std::vector<std::uint8_t> bytes(3073, 0);
        bytes[0] = 10;
        write_bytes(kTmp, bytes);
        CHECK_THROWS_AS(dt::load_cifar10_bin({kTmp}), DataError);
    }
}

TEST_CASE("normalization formula and invertibility") {
    dt::Dataset ds;
    ds.resolution = 32;
    ds.classes = 10;
    ds.labels = {0};
    ds.pixels.assign(3072, 0);  // all-zero record
    dt::Normalization norm;
    std::mt19937_64 rng(1);
    dt::Batch b = dt::make_batch(ds, {0}, dt::AugmentPolicy{}, rng, norm);
    for (int c = 0; c < 3; ++c) {
        const double want = (0.0 - norm.mean[static_cast<std::size_t>(c)]) /
                            norm.stddev[static_cast<std::size_t>(c)];
        CHECK(b.images.data()[c * 1024] == doctest::Approx(want).epsilon(1e-12));
        // invert: y*std + mean recovers the raw intensity
        const double recovered = b.images.data()[c * 1024] *
                                     norm.stddev[static_cast<std::size_t>(c)] +
                                 norm.mean[static_cast<std::size_t>(c)];
        CHECK(std::abs(recovered - 0.0) <= 1e-12);
    }
}

TEST_CASE("synthetic dataset: determinism, round robin, separated means") {
    dt::Dataset a = dt::synthetic_dataset(64, 8, 32, 42);
    dt::Dataset b = dt::synthetic_dataset(64, 8, 32, 42);
    CHECK(a.pixels == b.pixels);
    CHECK(a.labels == b.labels);

    dt::Dataset c = dt::synthetic_dataset(64, 8, 32, 43);
    CHECK(a.pixels != c.pixels);

    // round robin: 8 samples per class
    std::vector<int> counts(8, 0);
    for (int label : a.labels) {
        counts[static_cast<std::size_t>(label)]++;
    }
    for (int n : counts) {
        CHECK(n == 8);
    }

    auto means = dt::class_means(a);
    double min_dist = 1e300;
    for (std::size_t i = 0; i < means.size(); ++i) {
        for (std::size_t j = i + 1; j < means.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < means[i].size(); ++k) {
                const double d = means[i][k] - means[j][k];
                d2 += d * d;
            }
            min_dist = std::min(min_dist, std::sqrt(d2));
        }
    }
    CHECK(min_dist > 0.0);
}

TEST_CASE("augmentation: identity policy, flip involution, zero-offset crop") {
    dt::Dataset ds = dt::synthetic_dataset(4, 2, 32, 5);
    dt::Image img = dt::dataset_image(ds, 1);

    std::mt19937_64 rng(3);
    dt::Image same = dt::augment(img, rng, dt::AugmentPolicy{});
    CHECK(same.pixels == img.pixels);

    CHECK(dt::hflip(dt::hflip(img)).pixels == img.pixels);

    dt::Image cropped = dt::crop_shift(img, 0, 0, 4);
    CHECK(cropped.pixels == img.pixels);

    // forced flip via flip_prob = 1 twice restores the original
    dt::AugmentPolicy flip_always;
    flip_always.kind = dt::AugmentPolicy::Kind::Basic;
    flip_always.pad = 0;
    flip_always.flip_prob = 1.0;
    std::mt19937_64 r1(7), r2(7);
    dt::Image once = dt::augment(img, r1, flip_always);
    std::mt19937_64 r3(9);
    dt::Image twice = dt::augment(once, r3, flip_always);
    CHECK(twice.pixels == img.pixels);
    (void)r2;
}

TEST_CASE("batch iteration: sizes, determinism, permutation") {
    auto batches = dt::epoch_batches(10, 4, 11, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);

    auto again = dt::epoch_batches(10, 4, 11, 0);
    CHECK(batches == again);
    auto other_epoch = dt::epoch_batches(10, 4, 11, 1);
    CHECK(batches != other_epoch);

    std::set<Index> seen;
    for (const auto& b : batches) {
        for (Index i : b) {
            CHECK(seen.insert(i).second);  // no duplicates
        }
    }
    CHECK(seen.size() == 10);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 9);
}
