#include "stripmlp/model.hpp"

#include <cstring>
#include <fstream>

namespace stripmlp {

namespace ag = autograd;

void ModelConfig::validate() const {
    if (base_width < 2) {
        throw ConfigError("base width must be at least 2");
    }
    for (Index d : depths) {
        if (d < 1) {
            throw ConfigError("stage depths must be positive");
        }
    }
    if (classes < 1) {
        throw ConfigError("class count must be positive");
    }
    if (patch_size < 1 || resolution < 1 || resolution % (patch_size * 8) != 0) {
        throw ConfigError("resolution " + std::to_string(resolution) +
                          " must be divisible by patch size * 8 = " +
                          std::to_string(patch_size * 8));
    }
}

ModelConfig variant_config(const std::string& name) {
    ModelConfig cfg;
    if (name == "tstar" || name == "t*") {
        cfg.base_width = 80;
        cfg.depths = {2, 2, 6, 2};
    } else if (name == "t") {
        cfg.base_width = 80;
        cfg.depths = {2, 2, 12, 2};
    } else if (name == "s") {
        cfg.base_width = 96;
        cfg.depths = {2, 2, 18, 2};
    } else if (name == "b") {
        cfg.base_width = 112;
        cfg.depths = {2, 2, 18, 2};
    } else {
        throw ConfigError("unknown variant '" + name + "' (expected tstar|t|s|b)");
    }
    return cfg;
}

std::vector<std::string> variant_names() { return {"tstar", "t", "s", "b"}; }

StripMlpModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    StripMlpModel model;
    model.cfg = cfg;
    Rng rng(seed);

    model.embed = make_patch_embed(model.store, "embed", cfg.patch_size, cfg.base_width, rng);

    for (int s = 0; s < 4; ++s) {
        const Index c = cfg.stage_channels(s);
        const Index r = cfg.stage_resolution(s);
        BlockConfig bc;
        bc.channels = c;
        bc.strip_width = cfg.strip_width;
        bc.patches = cfg.patches;
        bc.mixing = cfg.mixing;
        bc.topology = cfg.topology;
        bc.eq1_ratio = cfg.eq1_ratio;
        bc.channel_ratio = cfg.channel_ratio;
        for (Index d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d) {
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(d);
            StageUnit unit;
            unit.strip = make_strip_mixing_block(model.store, prefix + ".strip", bc, r, r, rng);
            unit.channel = make_channel_mixing_block(model.store, prefix + ".channel", c,
                                                     cfg.channel_ratio, rng);
            model.stages[static_cast<std::size_t>(s)].push_back(std::move(unit));
        }
        if (s < 3) {
            model.merges[static_cast<std::size_t>(s)] = make_patch_merge(
                model.store, "merge" + std::to_string(s + 1), c, rng);
        }
    }

    const Index c1 = cfg.stage_channels(0);
    ConvSpec s13{c1, 4 * c1, 4, 4, 4, 4, 0, 0, 1, true};
    model.skip_1_to_3 = make_conv2d(model.store, "skip_1_to_3", s13, rng);
    ConvSpec s24{2 * c1, 8 * c1, 4, 4, 4, 4, 0, 0, 1, true};
    model.skip_2_to_4 = make_conv2d(model.store, "skip_2_to_4", s24, rng);

    model.head = make_linear(model.store, "head", 8 * c1, cfg.classes, rng);
    return model;
}

namespace {

Var run_stage(const std::vector<StageUnit>& units, Var x, bool training,
              bool update_running, int stage_index) {
    try {
        for (const StageUnit& unit : units) {
            x = unit.strip.forward(x, training, update_running);
            x = unit.channel.forward(x);
        }
    } catch (const NumericError& e) {
        throw NumericError("stage" + std::to_string(stage_index) + ": " + e.what());
    }
    return x;
}

}  // namespace

Var StripMlpModel::forward(const Var& images, bool training, bool update_running) const {
    if (images->value.rank() != 4 || images->value.dim(1) != 3 ||
        images->value.dim(2) != cfg.resolution || images->value.dim(3) != cfg.resolution) {
        throw ConfigError("model expects (N,3," + std::to_string(cfg.resolution) + "," +
                          std::to_string(cfg.resolution) + "), got " +
                          shape_str(images->value.shape()));
    }
    Var x = embed.forward(images);

    Var x1 = run_stage(stages[0], x, training, update_running, 1);
    stage_output_shapes[0] = x1->value.shape();

    Var x2 = run_stage(stages[1], merges[0].forward(x1), training, update_running, 2);
    stage_output_shapes[1] = x2->value.shape();

    Var x3_in = ag::add(merges[1].forward(x2), skip_1_to_3.forward(x1));
    Var x3 = run_stage(stages[2], x3_in, training, update_running, 3);
    stage_output_shapes[2] = x3->value.shape();

    Var x4_in = ag::add(merges[2].forward(x3), skip_2_to_4.forward(x2));
    Var x4 = run_stage(stages[3], x4_in, training, update_running, 4);
    stage_output_shapes[3] = x4->value.shape();

    return head.forward(ag::global_avg_pool(x4));
}

Tensor StripMlpModel::logits(const Tensor& images, bool training) const {
    ag::NoGradGuard guard;
    return forward(ag::constant(images), training, false)->value;
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

struct Crc32Table {
    std::uint32_t table[256];
    Crc32Table() {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            }
            table[i] = c;
        }
    }
};

void append_bytes(std::vector<std::uint8_t>& out, const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    out.insert(out.end(), p, p + n);
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size, const std::string& path)
        : data_(data), size_(size), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)])
                 << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)])
                 << (8 * i);
        }
        pos_ += 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::vector<double> f64(std::size_t n) {
        need(n * 8);
        std::vector<double> v(n);
        std::memcpy(v.data(), data_ + pos_, n * 8);
        pos_ += n * 8;
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) {
            throw IoError("checkpoint truncated at byte " + std::to_string(pos_) + ": " +
                          path_);
        }
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
    static const Crc32Table t;
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < size; ++i) {
        c = t.table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

void write_tensor_container(const std::string& path, const NamedTensors& entries) {
    std::vector<std::uint8_t> payload;
    append_u32(payload, kCheckpointVersion);
    append_u64(payload, entries.size());
    for (const auto& [name, tensor] : entries) {
        append_u32(payload, static_cast<std::uint32_t>(name.size()));
        append_bytes(payload, name.data(), name.size());
        append_u32(payload, static_cast<std::uint32_t>(tensor.rank()));
        for (Index d : tensor.shape()) {
            append_u64(payload, static_cast<std::uint64_t>(d));
        }
        append_bytes(payload, tensor.data(),
                     static_cast<std::size_t>(tensor.numel()) * sizeof(double));
    }
    const std::uint32_t checksum = crc32(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write("SMLP", 4);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    std::vector<std::uint8_t> tail;
    append_u32(tail, checksum);
    out.write(reinterpret_cast<const char*>(tail.data()), 4);
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

NamedTensors read_tensor_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open: " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "SMLP", 4) != 0) {
        throw IoError("not a checkpoint container: " + path);
    }
    const std::size_t payload_size = bytes.size() - 8;
    const std::uint32_t declared =
        static_cast<std::uint32_t>(bytes[bytes.size() - 4]) << 0 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
    if (crc32(bytes.data() + 4, payload_size) != declared) {
        throw IoError("checksum mismatch: " + path);
    }

    Reader r(bytes.data() + 4, payload_size, path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " +
                      path);
    }
    const std::uint64_t count = r.u64();
    NamedTensors entries;
    entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        Index numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<Index>(r.u64());
            numel *= shape[d];
        }
        std::vector<double> data = r.f64(static_cast<std::size_t>(numel));
        entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return entries;
}

NamedTensors model_state(const StripMlpModel& model) {
    NamedTensors out;
    out.reserve(model.store.entries().size());
    for (const ParamEntry& e : model.store.entries()) {
        out.emplace_back(e.name, e.var->value);
    }
    return out;
}

void load_model_state(StripMlpModel& model, const NamedTensors& entries) {
    // Entries with foreign names (optimizer state) are ignored here.
    std::size_t matched = 0;
    for (const auto& [name, tensor] : entries) {
        if (!model.store.contains(name)) {
            continue;
        }
        ParamEntry& e = model.store.at(name);
        if (e.var->value.shape() != tensor.shape()) {
            throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                             shape_str(tensor.shape()) + ", model expects " +
                             shape_str(e.var->value.shape()));
        }
        ++matched;
    }
    if (matched != model.store.entries().size()) {
        throw IoError("checkpoint is missing " +
                      std::to_string(model.store.entries().size() - matched) +
                      " model tensors");
    }
    for (const auto& [name, tensor] : entries) {
        if (model.store.contains(name)) {
            model.store.at(name).var->value = tensor;
        }
    }
}

}  // namespace stripmlp
