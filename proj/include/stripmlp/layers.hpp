#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stripmlp/autograd.hpp"
#include "stripmlp/params.hpp"
#include "stripmlp/tensor.hpp"

namespace stripmlp {

using autograd::Var;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

//! Which axis a strip projection mixes fully; the k-wide band runs along
//! the other one. Columns: every output column is a map of a k-band of
//! columns with full mixing over H. Rows: the mirrored case.
enum class StripAxis { Columns, Rows };

//! Channel-patch count as a function of the layer's channel count.
enum class PatchPolicy { CoverC, HalfC, QuarterC, EighthC, Single };

enum class MixerSelect { Both, CgsmmOnly, LsmmOnly };
enum class GsmlTopology { Cascade, Parallel };

Index patch_count_for(PatchPolicy policy, Index channels);
const char* patch_policy_name(PatchPolicy policy);

struct StripLayerConfig {
    StripAxis axis = StripAxis::Columns;
    Index strip_width = 3;  // odd
    Index patch_count = 1;
    Index span = 0;  // length of the mixed axis
    void validate(Index channels) const;
};

struct BlockConfig {
    Index channels = 0;
    Index strip_width = 3;
    PatchPolicy patches = PatchPolicy::QuarterC;
    MixerSelect mixing = MixerSelect::Both;
    GsmlTopology topology = GsmlTopology::Cascade;
    double eq1_ratio = 1.0;
    double channel_ratio = 3.0;
    void validate() const;
};

// ---------------------------------------------------------------------------
// Elementary layers
// ---------------------------------------------------------------------------

struct Conv2dLayer {
    ConvSpec spec;
    Var weight;
    Var bias;  // null when spec.has_bias is false
    Var forward(const Var& x) const { return autograd::conv2d(x, spec, weight, bias); }
};
Conv2dLayer make_conv2d(ParamStore& store, const std::string& name, const ConvSpec& spec,
                        Rng& rng);

struct LinearLayer {
    Var weight;  // [out, in]
    Var bias;
    Var forward(const Var& x) const { return autograd::linear(x, weight, bias); }
};
LinearLayer make_linear(ParamStore& store, const std::string& name, Index in, Index out,
                        Rng& rng);

struct BatchNorm2dLayer {
    Var gamma, beta;
    Var running_mean, running_var;  // buffers
    double eps = 1e-5;
    double momentum = 0.1;
    Var forward(const Var& x, bool training, bool update_running = true) const;
};
BatchNorm2dLayer make_batch_norm2d(ParamStore& store, const std::string& name, Index channels);

// ---------------------------------------------------------------------------
// Strip MLP layer
// ---------------------------------------------------------------------------

//! Strip projection on the channel-patched view (N, P, G, H, W).
//!
//! Each patch p carries one weight matrix [L, k*L] (conv form
//! [P*L, L, 1, k]): with axis = Columns, output column j of every
//! (n, p, g) slice is weight_p times the concatenation of columns
//! j-1 .. j+1 (k = 3 case), zero-padded at the borders; the weights are
//! shared across the G slices of a patch and across j. Rows mirrors the
//! construction with rows. k = 1 reduces to the plain per-axis MLP.
Var strip_mlp_1d(const Var& x5, const Var& weight, const Var& bias, StripAxis axis,
                 Index strip_width);

struct StripProjLayer {
    StripAxis axis = StripAxis::Columns;
    Index patches = 1;
    Index span = 0;         // L: length of the mixed axis
    Index strip_width = 3;  // k
    Var weight;             // [P*L, L, 1, k]
    Var bias;               // [P*L]
    //! x5 is the (N, P, G, H, W) view.
    Var forward(const Var& x5) const {
        return strip_mlp_1d(x5, weight, bias, axis, strip_width);
    }
};
StripProjLayer make_strip_proj(ParamStore& store, const std::string& name, StripAxis axis,
                               Index patches, Index span, Index strip_width, Rng& rng);

// ---------------------------------------------------------------------------
// Token-interaction modules
// ---------------------------------------------------------------------------

//! Cascade Group Strip Mixing Module: row-direction grouped strip
//! projection, channel fuse of (mixed, input), column-direction grouped
//! strip projection, second channel fuse of (mixed, input). Channel
//! patches are the strided groups c = slice * P + patch.
struct Cgsmm {
    Index channels = 0, patches = 1, height = 0, width = 0, strip_width = 3;
    StripProjLayer row_proj;  // mixes W, band over H
    Conv2dLayer fuse_row;     // 1x1, 2C -> C
    StripProjLayer col_proj;  // mixes H, band over W
    Conv2dLayer fuse_col;     // 1x1, 2C -> C
    Var forward(const Var& x) const;
};
Cgsmm make_cgsmm(ParamStore& store, const std::string& name, Index channels, Index height,
                 Index width, Index patches, Index strip_width, Rng& rng);

//! Parallel variant: both strip projections read the same input and a
//! single fuse combines (row-mixed, column-mixed, input), 3C -> C.
struct Pgsmm {
    Index channels = 0, patches = 1, height = 0, width = 0, strip_width = 3;
    StripProjLayer row_proj;
    StripProjLayer col_proj;
    Conv2dLayer fuse;
    Var forward(const Var& x) const;
};
Pgsmm make_pgsmm(ParamStore& store, const std::string& name, Index channels, Index height,
                 Index width, Index patches, Index strip_width, Rng& rng);

//! Data-dependent convex combination of branch outputs: softmax over the
//! branch axis of a bottleneck map of the pooled branch sum.
struct Reweight {
    Index channels = 0;
    Index branches = 2;
    LinearLayer fc1;  // C -> max(1, C/4)
    LinearLayer fc2;  // -> branches * C
    //! Per-(sample, branch, channel) weights, softmax over axis 1.
    Var attention(const std::vector<Var>& inputs) const;
    Var forward(const std::vector<Var>& inputs) const;
};
Reweight make_reweight(ParamStore& store, const std::string& name, Index channels,
                       Index branches, Rng& rng);

//! Local Strip Mixing Module: depth-wise 3x7 and 7x3 local linear maps
//! combined by the re-weight module.
struct Lsmm {
    Conv2dLayer row_branch;  // (3,7) window, pad (1,3)
    Conv2dLayer col_branch;  // (7,3) window, pad (3,1)
    Reweight reweight;
    Var forward(const Var& x) const;
};
Lsmm make_lsmm(ParamStore& store, const std::string& name, Index channels, Rng& rng);

//! Global response normalization; gain and shift start at zero so the
//! block begins as identity.
struct Grn {
    Var gain, shift;
    Var forward(const Var& x) const;
};
Grn make_grn(ParamStore& store, const std::string& name, Index channels);

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

struct StripMixingBlock {
    BlockConfig cfg;
    Index mixed_channels = 0;  // eq1_ratio * channels
    Conv2dLayer dwsc;          // depthwise 3x3
    Conv2dLayer mix_fc;        // 1x1 C -> mixed
    BatchNorm2dLayer bn;
    std::optional<Cgsmm> cgsmm;
    std::optional<Pgsmm> pgsmm;
    std::optional<Lsmm> lsmm;
    Conv2dLayer out_fc;  // 1x1 mixed -> C
    Var forward(const Var& x, bool training, bool update_running = true) const;
};
StripMixingBlock make_strip_mixing_block(ParamStore& store, const std::string& name,
                                         const BlockConfig& cfg, Index height, Index width,
                                         Rng& rng);

struct ChannelMixingBlock {
    Conv2dLayer expand;  // 1x1 C -> ratio*C
    Grn grn;
    Conv2dLayer project;  // 1x1 ratio*C -> C
    Var forward(const Var& x) const;
};
ChannelMixingBlock make_channel_mixing_block(ParamStore& store, const std::string& name,
                                             Index channels, double ratio, Rng& rng);

struct PatchEmbed {
    Index patch = 4;
    Conv2dLayer proj;  // kernel = stride = patch, 3 -> C
    Var forward(const Var& img) const;
};
PatchEmbed make_patch_embed(ParamStore& store, const std::string& name, Index patch,
                            Index channels, Rng& rng);

//! Concatenate each 2x2 spatial neighborhood into 4C channels (order
//! (channel, dy, dx)), then map 4C -> 2C pointwise.
struct PatchMerge {
    Conv2dLayer reduce;  // 1x1, 4C -> 2C
    Var forward(const Var& x) const;
};
PatchMerge make_patch_merge(ParamStore& store, const std::string& name, Index channels,
                            Rng& rng);

}  // namespace stripmlp
