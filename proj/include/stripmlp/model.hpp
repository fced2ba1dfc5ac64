#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stripmlp/layers.hpp"
#include "stripmlp/params.hpp"

namespace stripmlp {

//! Hyper-parameters of one Strip-MLP network.
struct ModelConfig {
    Index base_width = 80;
    std::array<Index, 4> depths{2, 2, 6, 2};
    Index patch_size = 4;
    Index classes = 1000;
    Index strip_width = 3;
    PatchPolicy patches = PatchPolicy::QuarterC;
    GsmlTopology topology = GsmlTopology::Cascade;
    MixerSelect mixing = MixerSelect::Both;
    double eq1_ratio = 1.0;
    double channel_ratio = 3.0;
    Index resolution = 224;

    void validate() const;
    Index stage_channels(int stage) const { return base_width << stage; }
    Index stage_resolution(int stage) const { return resolution / patch_size >> stage; }
};

//! Named variants: tstar, t, s, b.
ModelConfig variant_config(const std::string& name);
std::vector<std::string> variant_names();

struct StageUnit {
    StripMixingBlock strip;
    ChannelMixingBlock channel;
};

//! The four-stage network. Owns its parameters; the graph is rebuilt on
//! every forward call. Immutable during inference; training rebinds
//! parameter tensors between steps.
class StripMlpModel {
public:
    ModelConfig cfg;
    ParamStore store;
    PatchEmbed embed;
    std::array<std::vector<StageUnit>, 4> stages;
    std::array<PatchMerge, 3> merges;
    Conv2dLayer skip_1_to_3;  // stride-4 kernel-4, C -> 4C
    Conv2dLayer skip_2_to_4;  // stride-4 kernel-4, 2C -> 8C
    LinearLayer head;

    StripMlpModel() = default;
    StripMlpModel(const StripMlpModel&) = delete;
    StripMlpModel& operator=(const StripMlpModel&) = delete;
    StripMlpModel(StripMlpModel&&) = default;
    StripMlpModel& operator=(StripMlpModel&&) = default;

    //! Logits graph for a batch of images (N,3,R,R).
    Var forward(const Var& images, bool training, bool update_running = true) const;
    //! Value-only forward without graph construction.
    Tensor logits(const Tensor& images, bool training = false) const;

    //! Spatial shape of each stage output from the last forward call.
    mutable std::array<Shape, 4> stage_output_shapes{};
};

StripMlpModel build_model(const ModelConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoint container: magic "SMLP", version u32, entry count u64, then
// per entry name length u32 + UTF-8 name, rank u32, dims u64 LE, raw
// little-endian f64 payload; trailing CRC32 over everything after the
// magic. All integers little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensor_container(const std::string& path, const NamedTensors& entries);
NamedTensors read_tensor_container(const std::string& path);

//! All parameters and buffers, in registration order.
NamedTensors model_state(const StripMlpModel& model);
//! Rebind parameters from named tensors; names and shapes must match.
void load_model_state(StripMlpModel& model, const NamedTensors& entries);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

}  // namespace stripmlp
