#include "stripmlp/layers.hpp"

#include <cmath>

namespace stripmlp {

namespace ag = autograd;

namespace {
constexpr double kInitSigma = 0.02;
constexpr double kGrnEps = 1e-6;
}  // namespace

Index patch_count_for(PatchPolicy policy, Index channels) {
    Index divisor = 1;
    switch (policy) {
        case PatchPolicy::CoverC: divisor = 1; break;
        case PatchPolicy::HalfC: divisor = 2; break;
        case PatchPolicy::QuarterC: divisor = 4; break;
        case PatchPolicy::EighthC: divisor = 8; break;
        case PatchPolicy::Single: return 1;
    }
    if (channels % divisor != 0) {
        throw ConfigError("patch policy C/" + std::to_string(divisor) +
                          " does not divide " + std::to_string(channels) + " channels");
    }
    return channels / divisor;
}

const char* patch_policy_name(PatchPolicy policy) {
    switch (policy) {
        case PatchPolicy::CoverC: return "c1";
        case PatchPolicy::HalfC: return "c2";
        case PatchPolicy::QuarterC: return "c4";
        case PatchPolicy::EighthC: return "c8";
        case PatchPolicy::Single: return "one";
    }
    return "?";
}

void StripLayerConfig::validate(Index channels) const {
    if (strip_width < 1 || strip_width % 2 == 0) {
        throw ConfigError("strip width must be odd and >= 1, got " +
                          std::to_string(strip_width));
    }
    if (patch_count < 1 || channels % patch_count != 0) {
        throw ConfigError("patch count " + std::to_string(patch_count) +
                          " does not divide " + std::to_string(channels) + " channels");
    }
    if (span < 1) {
        throw ConfigError("strip span must be positive");
    }
}

void BlockConfig::validate() const {
    if (channels < 1) {
        throw ConfigError("block needs at least one channel");
    }
    if (strip_width < 1 || strip_width % 2 == 0) {
        throw ConfigError("strip width must be odd and >= 1");
    }
    if (eq1_ratio <= 0.0 || channel_ratio < 1.0) {
        throw ConfigError("expansion ratios out of range");
    }
    const Index mixed =
        static_cast<Index>(std::llround(eq1_ratio * static_cast<double>(channels)));
    if (mixing == MixerSelect::Both && mixed % 2 != 0) {
        throw ConfigError("both mixing branches need an even mixed-channel count, got " +
                          std::to_string(mixed));
    }
}

Conv2dLayer make_conv2d(ParamStore& store, const std::string& name, const ConvSpec& spec,
                        Rng& rng) {
    spec.validate();
    Conv2dLayer layer;
    layer.spec = spec;
    layer.weight = store.add(name + ".weight",
                             rng.trunc_normal(spec.weight_shape(), kInitSigma),
                             ParamRole::Weight);
    if (spec.has_bias) {
        layer.bias =
            store.add(name + ".bias", Tensor::zeros({spec.out_channels}), ParamRole::Bias);
    }
    return layer;
}

LinearLayer make_linear(ParamStore& store, const std::string& name, Index in, Index out,
                        Rng& rng) {
    LinearLayer layer;
    layer.weight = store.add(name + ".weight", rng.trunc_normal({out, in}, kInitSigma),
                             ParamRole::Weight);
    layer.bias = store.add(name + ".bias", Tensor::zeros({out}), ParamRole::Bias);
    return layer;
}

Var BatchNorm2dLayer::forward(const Var& x, bool training, bool update_running) const {
    Tensor rm = running_mean->value;
    Tensor rv = running_var->value;
    Var y = ag::batch_norm2d(x, gamma, beta, rm, rv, training, update_running, eps, momentum);
    if (training && update_running) {
        running_mean->value = rm;
        running_var->value = rv;
    }
    return y;
}

BatchNorm2dLayer make_batch_norm2d(ParamStore& store, const std::string& name,
                                   Index channels) {
    BatchNorm2dLayer layer;
    layer.gamma =
        store.add(name + ".gamma", Tensor::full({channels}, 1.0), ParamRole::NormGain);
    layer.beta = store.add(name + ".beta", Tensor::zeros({channels}), ParamRole::NormShift);
    layer.running_mean = store.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
    layer.running_var =
        store.add_buffer(name + ".running_var", Tensor::full({channels}, 1.0));
    return layer;
}

// ---------------------------------------------------------------------------
// Strip MLP layer
// ---------------------------------------------------------------------------

Var strip_mlp_1d(const Var& x5, const Var& weight, const Var& bias, StripAxis axis,
                 Index strip_width) {
    if (x5->value.rank() != 5) {
        throw ShapeError("strip_mlp_1d expects (N,P,G,H,W), got " +
                         shape_str(x5->value.shape()));
    }
    if (strip_width < 1 || strip_width % 2 == 0) {
        throw ConfigError("strip width must be odd and >= 1, got " +
                          std::to_string(strip_width));
    }
    const Index n = x5->value.dim(0), p = x5->value.dim(1), g = x5->value.dim(2);
    const Index h = x5->value.dim(3), w = x5->value.dim(4);
    const Index span = (axis == StripAxis::Columns) ? h : w;

    ConvSpec spec;
    spec.in_channels = spec.out_channels = p * span;
    spec.kernel_h = 1;
    spec.kernel_w = strip_width;
    spec.pad_w = (strip_width - 1) / 2;
    spec.groups = p;
    spec.has_bias = bias != nullptr;

    if (axis == StripAxis::Columns) {
        // (N,P,G,H,W) -> (N,P,H,G,W) -> (N, P*H, G, W): the band slides
        // over W while H mixes fully within each patch.
        Var packed = ag::reshape(ag::permute(x5, {0, 1, 3, 2, 4}), {n, p * h, g, w});
        Var mixed = ag::conv2d(packed, spec, weight, bias);
        return ag::permute(ag::reshape(mixed, {n, p, h, g, w}), {0, 1, 3, 2, 4});
    }
    // Rows: (N,P,G,H,W) -> (N,P,W,G,H) -> (N, P*W, G, H)
    Var packed = ag::reshape(ag::permute(x5, {0, 1, 4, 2, 3}), {n, p * w, g, h});
    Var mixed = ag::conv2d(packed, spec, weight, bias);
    return ag::permute(ag::reshape(mixed, {n, p, w, g, h}), {0, 1, 3, 4, 2});
}

StripProjLayer make_strip_proj(ParamStore& store, const std::string& name, StripAxis axis,
                               Index patches, Index span, Index strip_width, Rng& rng) {
    StripProjLayer layer;
    layer.axis = axis;
    layer.patches = patches;
    layer.span = span;
    layer.strip_width = strip_width;
    ConvSpec spec;
    spec.in_channels = spec.out_channels = patches * span;
    spec.kernel_w = strip_width;
    spec.pad_w = (strip_width - 1) / 2;
    spec.groups = patches;
    layer.weight = store.add(name + ".weight",
                             rng.trunc_normal(spec.weight_shape(), kInitSigma),
                             ParamRole::Weight);
    layer.bias =
        store.add(name + ".bias", Tensor::zeros({patches * span}), ParamRole::Bias);
    return layer;
}

// ---------------------------------------------------------------------------
// CGSMM / PGSMM
// ---------------------------------------------------------------------------

namespace {

// (N,C,H,W) -> (N,P,C/P,H,W) with the strided patch split c = slice*P + patch.
Var to_patched(const Var& x, Index patches) {
    const Index n = x->value.dim(0), c = x->value.dim(1);
    const Index h = x->value.dim(2), w = x->value.dim(3);
    Var x5 = ag::reshape(x, {n, c / patches, patches, h, w});
    return ag::permute(x5, {0, 2, 1, 3, 4});
}

Var from_patched(const Var& x5) {
    const Index n = x5->value.dim(0), p = x5->value.dim(1), g = x5->value.dim(2);
    const Index h = x5->value.dim(3), w = x5->value.dim(4);
    return ag::reshape(ag::permute(x5, {0, 2, 1, 3, 4}), {n, p * g, h, w});
}

void check_mixer_input(const char* what, const Var& x, Index channels, Index patches) {
    if (x->value.rank() != 4 || x->value.dim(1) != channels) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                         " channels, got input " + shape_str(x->value.shape()));
    }
    if (channels % patches != 0) {
        throw ConfigError(std::string(what) + ": patch count " + std::to_string(patches) +
                          " does not divide " + std::to_string(channels));
    }
}

}  // namespace

Var Cgsmm::forward(const Var& x) const {
    check_mixer_input("cgsmm", x, channels, patches);
    Var mixed_w = from_patched(row_proj.forward(to_patched(x, patches)));
    Var fused = fuse_row.forward(ag::concat({mixed_w, x}, 1));
    Var mixed_h = from_patched(col_proj.forward(to_patched(fused, patches)));
    return fuse_col.forward(ag::concat({mixed_h, x}, 1));
}

Cgsmm make_cgsmm(ParamStore& store, const std::string& name, Index channels, Index height,
                 Index width, Index patches, Index strip_width, Rng& rng) {
    StripLayerConfig check{StripAxis::Rows, strip_width, patches, width};
    check.validate(channels);
    Cgsmm m;
    m.channels = channels;
    m.patches = patches;
    m.height = height;
    m.width = width;
    m.strip_width = strip_width;
    m.row_proj = make_strip_proj(store, name + ".row_proj", StripAxis::Rows, patches, width,
                                 strip_width, rng);
    ConvSpec fuse{2 * channels, channels, 1, 1, 1, 1, 0, 0, 1, true};
    m.fuse_row = make_conv2d(store, name + ".fuse_row", fuse, rng);
    m.col_proj = make_strip_proj(store, name + ".col_proj", StripAxis::Columns, patches,
                                 height, strip_width, rng);
    m.fuse_col = make_conv2d(store, name + ".fuse_col", fuse, rng);
    return m;
}

Var Pgsmm::forward(const Var& x) const {
    check_mixer_input("pgsmm", x, channels, patches);
    Var x5 = to_patched(x, patches);
    Var mixed_w = from_patched(row_proj.forward(x5));
    Var mixed_h = from_patched(col_proj.forward(x5));
    return fuse.forward(ag::concat({mixed_w, mixed_h, x}, 1));
}

Pgsmm make_pgsmm(ParamStore& store, const std::string& name, Index channels, Index height,
                 Index width, Index patches, Index strip_width, Rng& rng) {
    StripLayerConfig check{StripAxis::Rows, strip_width, patches, width};
    check.validate(channels);
    Pgsmm m;
    m.channels = channels;
    m.patches = patches;
    m.height = height;
    m.width = width;
    m.strip_width = strip_width;
    m.row_proj = make_strip_proj(store, name + ".row_proj", StripAxis::Rows, patches, width,
                                 strip_width, rng);
    m.col_proj = make_strip_proj(store, name + ".col_proj", StripAxis::Columns, patches,
                                 height, strip_width, rng);
    ConvSpec fuse{3 * channels, channels, 1, 1, 1, 1, 0, 0, 1, true};
    m.fuse = make_conv2d(store, name + ".fuse", fuse, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Re-weight and LSMM
// ---------------------------------------------------------------------------

Var Reweight::attention(const std::vector<Var>& inputs) const {
    if (inputs.size() < 2) {
        throw UsageError("reweight needs at least two branches");
    }
    for (const Var& v : inputs) {
        if (!v->value.same_shape(inputs[0]->value)) {
            throw ShapeError("reweight branches must share a shape");
        }
    }
    Var total = inputs[0];
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        total = ag::add(total, inputs[i]);
    }
    const Index n = total->value.dim(0);
    Var pooled = ag::global_avg_pool(total);
    Var hidden = ag::gelu(fc1.forward(pooled));
    Var logits = fc2.forward(hidden);
    return ag::softmax_axis(ag::reshape(logits, {n, branches, channels}), 1);
}

Var Reweight::forward(const std::vector<Var>& inputs) const {
    Var a = attention(inputs);
    const Index n = a->value.dim(0);
    std::vector<Var> per_branch =
        ag::split(a, 1, std::vector<Index>(inputs.size(), 1));
    Var out;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Var w = ag::reshape(per_branch[i], {n, channels});
        Var term = ag::scale_channels(inputs[i], w);
        out = out ? ag::add(out, term) : term;
    }
    return out;
}

Reweight make_reweight(ParamStore& store, const std::string& name, Index channels,
                       Index branches, Rng& rng) {
    Reweight r;
    r.channels = channels;
    r.branches = branches;
    const Index hidden = std::max<Index>(1, channels / 4);
    r.fc1 = make_linear(store, name + ".fc1", channels, hidden, rng);
    r.fc2 = make_linear(store, name + ".fc2", hidden, branches * channels, rng);
    return r;
}

Var Lsmm::forward(const Var& x) const {
    Var rows = row_branch.forward(x);
    Var cols = col_branch.forward(x);
    return reweight.forward({rows, cols});
}

Lsmm make_lsmm(ParamStore& store, const std::string& name, Index channels, Rng& rng) {
    Lsmm m;
    ConvSpec row{channels, channels, 3, 7, 1, 1, 1, 3, channels, true};
    ConvSpec col{channels, channels, 7, 3, 1, 1, 3, 1, channels, true};
    m.row_branch = make_conv2d(store, name + ".row_branch", row, rng);
    m.col_branch = make_conv2d(store, name + ".col_branch", col, rng);
    m.reweight = make_reweight(store, name + ".reweight", channels, 2, rng);
    return m;
}

// ---------------------------------------------------------------------------
// GRN and blocks
// ---------------------------------------------------------------------------

Var Grn::forward(const Var& x) const {
    Var energy = ag::sqrt_elem(ag::sum_spatial(ag::mul(x, x)));  // per-channel spatial L2
    Var mean = ag::add_scalar(ag::row_mean_broadcast(energy), kGrnEps);
    Var norm = ag::div(energy, mean);
    return ag::add(ag::channel_affine(ag::scale_channels(x, norm), gain, shift), x);
}

Grn make_grn(ParamStore& store, const std::string& name, Index channels) {
    Grn g;
    g.gain = store.add(name + ".gain", Tensor::zeros({channels}), ParamRole::NormGain);
    g.shift = store.add(name + ".shift", Tensor::zeros({channels}), ParamRole::NormShift);
    return g;
}

Var StripMixingBlock::forward(const Var& x, bool training, bool update_running) const {
    Var pre = mix_fc.forward(dwsc.forward(x));
    Var mixed = ag::gelu(bn.forward(pre, training, update_running));

    Var joined;
    if (cfg.mixing == MixerSelect::Both) {
        const Index half = mixed_channels / 2;
        std::vector<Var> halves = ag::split(mixed, 1, {half, half});
        Var global_part = cgsmm ? cgsmm->forward(halves[0]) : pgsmm->forward(halves[0]);
        Var local_part = lsmm->forward(halves[1]);
        joined = ag::concat({global_part, local_part}, 1);
    } else if (cfg.mixing == MixerSelect::CgsmmOnly) {
        joined = cgsmm ? cgsmm->forward(mixed) : pgsmm->forward(mixed);
    } else {
        joined = lsmm->forward(mixed);
    }
    return ag::add(out_fc.forward(joined), x);
}

StripMixingBlock make_strip_mixing_block(ParamStore& store, const std::string& name,
                                         const BlockConfig& cfg, Index height, Index width,
                                         Rng& rng) {
    cfg.validate();
    StripMixingBlock b;
    b.cfg = cfg;
    const Index c = cfg.channels;
    b.mixed_channels =
        static_cast<Index>(std::llround(cfg.eq1_ratio * static_cast<double>(c)));

    ConvSpec dw{c, c, 3, 3, 1, 1, 1, 1, c, true};
    b.dwsc = make_conv2d(store, name + ".dwsc", dw, rng);
    ConvSpec fc{c, b.mixed_channels, 1, 1, 1, 1, 0, 0, 1, true};
    b.mix_fc = make_conv2d(store, name + ".mix_fc", fc, rng);
    b.bn = make_batch_norm2d(store, name + ".bn", b.mixed_channels);

    const Index branch_c =
        (cfg.mixing == MixerSelect::Both) ? b.mixed_channels / 2 : b.mixed_channels;
    if (cfg.mixing != MixerSelect::LsmmOnly) {
        const Index patches = patch_count_for(cfg.patches, branch_c);
        if (cfg.topology == GsmlTopology::Cascade) {
            b.cgsmm = make_cgsmm(store, name + ".cgsmm", branch_c, height, width, patches,
                                 cfg.strip_width, rng);
        } else {
            b.pgsmm = make_pgsmm(store, name + ".pgsmm", branch_c, height, width, patches,
                                 cfg.strip_width, rng);
        }
    }
    if (cfg.mixing != MixerSelect::CgsmmOnly) {
        b.lsmm = make_lsmm(store, name + ".lsmm", branch_c, rng);
    }

    ConvSpec out{b.mixed_channels, c, 1, 1, 1, 1, 0, 0, 1, true};
    b.out_fc = make_conv2d(store, name + ".out_fc", out, rng);
    return b;
}

Var ChannelMixingBlock::forward(const Var& x) const {
    return ag::add(project.forward(grn.forward(ag::gelu(expand.forward(x)))), x);
}

ChannelMixingBlock make_channel_mixing_block(ParamStore& store, const std::string& name,
                                             Index channels, double ratio, Rng& rng) {
    if (ratio < 1.0) {
        throw ConfigError("channel mixing ratio must be >= 1");
    }
    ChannelMixingBlock b;
    const Index wide =
        static_cast<Index>(std::llround(ratio * static_cast<double>(channels)));
    ConvSpec up{channels, wide, 1, 1, 1, 1, 0, 0, 1, true};
    ConvSpec down{wide, channels, 1, 1, 1, 1, 0, 0, 1, true};
    b.expand = make_conv2d(store, name + ".expand", up, rng);
    b.grn = make_grn(store, name + ".grn", wide);
    b.project = make_conv2d(store, name + ".project", down, rng);
    return b;
}

Var PatchEmbed::forward(const Var& img) const {
    const Index h = img->value.dim(2), w = img->value.dim(3);
    if (h % patch != 0 || w % patch != 0) {
        throw ConfigError("patch size " + std::to_string(patch) + " does not divide input " +
                          shape_str(img->value.shape()));
    }
    return proj.forward(img);
}

PatchEmbed make_patch_embed(ParamStore& store, const std::string& name, Index patch,
                            Index channels, Rng& rng) {
    PatchEmbed e;
    e.patch = patch;
    ConvSpec spec{3, channels, patch, patch, patch, patch, 0, 0, 1, true};
    e.proj = make_conv2d(store, name + ".proj", spec, rng);
    return e;
}

Var PatchMerge::forward(const Var& x) const {
    const Index n = x->value.dim(0), c = x->value.dim(1);
    const Index h = x->value.dim(2), w = x->value.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("patch merge needs even spatial dims, got " +
                          shape_str(x->value.shape()));
    }
    Var grid = ag::reshape(x, {n, c, h / 2, 2, w / 2, 2});
    Var gathered = ag::permute(grid, {0, 1, 3, 5, 2, 4});  // (N,C,2,2,H/2,W/2)
    Var stacked = ag::reshape(gathered, {n, 4 * c, h / 2, w / 2});
    return reduce.forward(stacked);
}

PatchMerge make_patch_merge(ParamStore& store, const std::string& name, Index channels,
                            Rng& rng) {
    PatchMerge m;
    ConvSpec spec{4 * channels, 2 * channels, 1, 1, 1, 1, 0, 0, 1, true};
    m.reduce = make_conv2d(store, name + ".reduce", spec, rng);
    return m;
}

}  // namespace stripmlp
