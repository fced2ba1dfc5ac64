#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "oracles.hpp"
#include "stripmlp/model.hpp"

using namespace stripmlp;
namespace ag = stripmlp::autograd;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_width = 16;
    cfg.depths = {1, 1, 1, 1};
    cfg.patch_size = 2;
    cfg.resolution = 32;
    cfg.classes = 5;
    return cfg;
}

}  // namespace

TEST_CASE("same seed builds a bitwise-identical parameter store") {
    ModelConfig cfg = tiny_config();
    StripMlpModel a = build_model(cfg, 1234);
    StripMlpModel b = build_model(cfg, 1234);
    REQUIRE(a.store.entries().size() == b.store.entries().size());
    for (std::size_t i = 0; i < a.store.entries().size(); ++i) {
        const auto& ea = a.store.entries()[i];
        const auto& eb = b.store.entries()[i];
        CHECK(ea.name == eb.name);
        CHECK(oracle::max_abs_diff(ea.var->value, eb.var->value) == 0.0);
    }
    StripMlpModel c = build_model(cfg, 99);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.store.entries().size(); ++i) {
        diff += oracle::max_abs_diff(a.store.entries()[i].var->value,
                                     c.store.entries()[i].var->value);
    }
    CHECK(diff > 0.0);
}

TEST_CASE("forward: logits shape, finiteness, softmax rows, stage schedule") {
    ModelConfig cfg = tiny_config();
    StripMlpModel model = build_model(cfg, 7);
    std::mt19937_64 rng(5);
    Tensor batch = oracle::random_tensor({2, 3, 32, 32}, rng);
    Tensor logits = model.logits(batch);
    CHECK(logits.shape() == Shape{2, 5});
    CHECK(logits.all_finite());

    Tensor probs = ops::softmax_axis(logits, 1);
    for (Index i = 0; i < 2; ++i) {
        double total = 0.0;
        for (Index j = 0; j < 5; ++j) {
            total += probs.data()[i * 5 + j];
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }

    // stage schedule: resolution halves, channels double; final 8C map
    CHECK(model.stage_output_shapes[0] == Shape{2, 16, 16, 16});
    CHECK(model.stage_output_shapes[1] == Shape{2, 32, 8, 8});
    CHECK(model.stage_output_shapes[2] == Shape{2, 64, 4, 4});
    CHECK(model.stage_output_shapes[3] == Shape{2, 128, 2, 2});

    CHECK_THROWS_AS(model.logits(Tensor::zeros({2, 3, 16, 16})), ConfigError);
}

TEST_CASE("zeroing the residual-closing FCs reduces to the embed/merge/skip skeleton") {
    ModelConfig cfg = tiny_config();
    StripMlpModel model = build_model(cfg, 21);
    for (auto& stage : model.stages) {
        for (auto& unit : stage) {
            unit.strip.out_fc.weight->value =
                Tensor::zeros(unit.strip.out_fc.weight->value.shape());
            unit.strip.out_fc.bias->value =
                Tensor::zeros(unit.strip.out_fc.bias->value.shape());
            unit.channel.project.weight->value =
                Tensor::zeros(unit.channel.project.weight->value.shape());
            unit.channel.project.bias->value =
                Tensor::zeros(unit.channel.project.bias->value.shape());
        }
    }
    std::mt19937_64 rng(17);
    Tensor batch = oracle::random_tensor({2, 3, 32, 32}, rng);
    Tensor got = model.logits(batch);

    // Independent skeleton using the same weights: embed -> merge -> +skip
    // -> merge -> +skip -> pool -> head.
    ag::NoGradGuard guard;
    Var x = model.embed.forward(ag::constant(batch));
    Var x2 = model.merges[0].forward(x);
    Var x3 = ag::add(model.merges[1].forward(x2), model.skip_1_to_3.forward(x));
    Var x4 = ag::add(model.merges[2].forward(x3), model.skip_2_to_4.forward(x2));
    Tensor want = model.head.forward(ag::global_avg_pool(x4))->value;

    CHECK(oracle::max_abs_diff(got, want) == 0.0);
}

TEST_CASE("gradient reaches every trainable tensor on a 2-sample batch") {
    ModelConfig cfg = tiny_config();
    StripMlpModel model = build_model(cfg, 3);
    std::mt19937_64 rng(9);
    Tensor batch = oracle::random_tensor({2, 3, 32, 32}, rng);
    std::vector<int> labels{1, 4};

    model.store.zero_grad();
    Var logits = model.forward(ag::constant(batch), true, false);
    Var loss = ag::cross_entropy(logits, labels, 0.1);
    ag::backward(loss);

    for (const ParamEntry& e : model.store.entries()) {
        if (!e.trainable) {
            continue;
        }
        INFO("parameter ", e.name);
        REQUIRE(e.var->has_grad);
        CHECK(oracle::max_abs(e.var->grad) > 0.0);
    }
}

TEST_CASE("checkpoint container: round trip, corruption, version, shape errors") {
    ModelConfig cfg = tiny_config();
    StripMlpModel model = build_model(cfg, 31);
    const std::string path = "/tmp/stripmlp_test_ckpt.bin";
    write_tensor_container(path, model_state(model));

    SUBCASE("round trip restores bitwise-identical tensors") {
        NamedTensors back = read_tensor_container(path);
        REQUIRE(back.size() == model.store.entries().size());
        for (std::size_t i = 0; i < back.size(); ++i) {
            CHECK(back[i].first == model.store.entries()[i].name);
            CHECK(oracle::max_abs_diff(back[i].second,
                                       model.store.entries()[i].var->value) == 0.0);
        }
        StripMlpModel fresh = build_model(cfg, 777);
        load_model_state(fresh, back);
        std::mt19937_64 rng(1);
        Tensor batch = oracle::random_tensor({1, 3, 32, 32}, rng);
        CHECK(oracle::max_abs_diff(fresh.logits(batch), model.logits(batch)) == 0.0);
    }

    SUBCASE("corrupted payload fails the checksum") {
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f != nullptr);
        std::fseek(f, 64, SEEK_SET);
        std::fputc(0x5A, f);
        std::fclose(f);
        CHECK_THROWS_AS(read_tensor_container(path), IoError);
    }

    SUBCASE("version mismatch is rejected") {
        // Hand-built container: version 9, zero entries, valid checksum.
        std::vector<std::uint8_t> payload;
        const std::uint32_t version = 9;
        const std::uint64_t count = 0;
        for (int i = 0; i < 4; ++i) {
            payload.push_back(static_cast<std::uint8_t>(version >> (8 * i)));
        }
        for (int i = 0; i < 8; ++i) {
            payload.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
        }
        const std::uint32_t sum = crc32(payload.data(), payload.size());
        FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite("SMLP", 1, 4, f);
        std::fwrite(payload.data(), 1, payload.size(), f);
        for (int i = 0; i < 4; ++i) {
            std::fputc(static_cast<int>((sum >> (8 * i)) & 0xFF), f);
        }
        std::fclose(f);
        CHECK_THROWS_AS(read_tensor_container(path), IoError);
    }

    SUBCASE("mismatched shapes are a named-tensor error") {
        NamedTensors back = read_tensor_container(path);
        ModelConfig wide = cfg;
        wide.base_width = 32;
        StripMlpModel other = build_model(wide, 1);
        CHECK_THROWS_AS(load_model_state(other, back), ShapeError);
    }
}
