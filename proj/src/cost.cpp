#include "stripmlp/cost.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace stripmlp::cost {

using nlohmann::json;

Index LayerPlan::weight_params() const {
    switch (kind) {
        case LayerKind::Conv: return conv.weight_count();
        case LayerKind::Linear: return linear_in * linear_out;
        case LayerKind::BatchNorm: return norm_channels;  // gain
        case LayerKind::Grn: return norm_channels;        // gain
    }
    return 0;
}

Index LayerPlan::bias_params() const {
    switch (kind) {
        case LayerKind::Conv: return conv.bias_count();
        case LayerKind::Linear: return linear_out;
        case LayerKind::BatchNorm: return norm_channels;  // shift
        case LayerKind::Grn: return norm_channels;        // shift
    }
    return 0;
}

Index LayerPlan::flops() const {
    switch (kind) {
        case LayerKind::Conv: return conv.flops(conv_in_h, conv_in_w);
        case LayerKind::Linear: return linear_rows * linear_in * linear_out;
        default: return 0;
    }
}

namespace {

LayerPlan conv_plan(std::string name, int stage, const ConvSpec& spec, Index in_h,
                    Index in_w) {
    LayerPlan p;
    p.name = std::move(name);
    p.kind = LayerKind::Conv;
    p.stage = stage;
    p.conv = spec;
    p.conv_in_h = in_h;
    p.conv_in_w = in_w;
    return p;
}

LayerPlan linear_plan(std::string name, int stage, Index in, Index out, Index rows = 1) {
    LayerPlan p;
    p.name = std::move(name);
    p.kind = LayerKind::Linear;
    p.stage = stage;
    p.linear_in = in;
    p.linear_out = out;
    p.linear_rows = rows;
    return p;
}

LayerPlan norm_plan(std::string name, int stage, LayerKind kind, Index channels) {
    LayerPlan p;
    p.name = std::move(name);
    p.kind = kind;
    p.stage = stage;
    p.norm_channels = channels;
    return p;
}

ConvSpec pointwise(Index in, Index out) {
    return ConvSpec{in, out, 1, 1, 1, 1, 0, 0, 1, true};
}

ConvSpec strip_proj_spec(Index patches, Index span, Index k) {
    ConvSpec s;
    s.in_channels = s.out_channels = patches * span;
    s.kernel_w = k;
    s.pad_w = (k - 1) / 2;
    s.groups = patches;
    return s;
}

void plan_strip_block(ModelPlan& out, const std::string& prefix, int stage,
                      const ModelConfig& cfg, Index c, Index r) {
    const Index mixed =
        static_cast<Index>(std::llround(cfg.eq1_ratio * static_cast<double>(c)));
    ConvSpec dw{c, c, 3, 3, 1, 1, 1, 1, c, true};
    out.layers.push_back(conv_plan(prefix + ".dwsc", stage, dw, r, r));
    out.layers.push_back(conv_plan(prefix + ".mix_fc", stage, pointwise(c, mixed), r, r));
    out.layers.push_back(norm_plan(prefix + ".bn", stage, LayerKind::BatchNorm, mixed));

    const Index branch_c = (cfg.mixing == MixerSelect::Both) ? mixed / 2 : mixed;
    if (cfg.mixing != MixerSelect::LsmmOnly) {
        const Index patches = patch_count_for(cfg.patches, branch_c);
        const Index slices = branch_c / patches;
        const std::string base =
            prefix + (cfg.topology == GsmlTopology::Cascade ? ".cgsmm" : ".pgsmm");
        // strip convs run on the packed view: spatial dims (slices, span)
        out.layers.push_back(conv_plan(base + ".row_proj", stage,
                                       strip_proj_spec(patches, r, cfg.strip_width),
                                       slices, r));
        out.layers.push_back(conv_plan(base + ".col_proj", stage,
                                       strip_proj_spec(patches, r, cfg.strip_width),
                                       slices, r));
        if (cfg.topology == GsmlTopology::Cascade) {
            out.layers.push_back(conv_plan(base + ".fuse_row", stage,
                                           pointwise(2 * branch_c, branch_c), r, r));
            out.layers.push_back(conv_plan(base + ".fuse_col", stage,
                                           pointwise(2 * branch_c, branch_c), r, r));
        } else {
            out.layers.push_back(conv_plan(base + ".fuse", stage,
                                           pointwise(3 * branch_c, branch_c), r, r));
        }
    }
    if (cfg.mixing != MixerSelect::CgsmmOnly) {
        ConvSpec row{branch_c, branch_c, 3, 7, 1, 1, 1, 3, branch_c, true};
        ConvSpec col{branch_c, branch_c, 7, 3, 1, 1, 3, 1, branch_c, true};
        out.layers.push_back(conv_plan(prefix + ".lsmm.row_branch", stage, row, r, r));
        out.layers.push_back(conv_plan(prefix + ".lsmm.col_branch", stage, col, r, r));
        const Index hidden = std::max<Index>(1, branch_c / 4);
        out.layers.push_back(
            linear_plan(prefix + ".lsmm.reweight.fc1", stage, branch_c, hidden));
        out.layers.push_back(
            linear_plan(prefix + ".lsmm.reweight.fc2", stage, hidden, 2 * branch_c));
    }
    out.layers.push_back(conv_plan(prefix + ".out_fc", stage, pointwise(mixed, c), r, r));
}

void plan_channel_block(ModelPlan& out, const std::string& prefix, int stage,
                        const ModelConfig& cfg, Index c, Index r) {
    const Index wide =
        static_cast<Index>(std::llround(cfg.channel_ratio * static_cast<double>(c)));
    out.layers.push_back(conv_plan(prefix + ".expand", stage, pointwise(c, wide), r, r));
    out.layers.push_back(norm_plan(prefix + ".grn", stage, LayerKind::Grn, wide));
    out.layers.push_back(conv_plan(prefix + ".project", stage, pointwise(wide, c), r, r));
}

}  // namespace

ModelPlan plan_model(const ModelConfig& cfg) {
    cfg.validate();
    ModelPlan plan;
    plan.cfg = cfg;

    ConvSpec embed{3,
                   cfg.base_width,
                   cfg.patch_size,
                   cfg.patch_size,
                   cfg.patch_size,
                   cfg.patch_size,
                   0,
                   0,
                   1,
                   true};
    plan.layers.push_back(conv_plan("embed.proj", 0, embed, cfg.resolution, cfg.resolution));

    for (int s = 0; s < 4; ++s) {
        const Index c = cfg.stage_channels(s);
        const Index r = cfg.stage_resolution(s);
        for (Index d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d) {
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(d);
            plan_strip_block(plan, prefix + ".strip", s + 1, cfg, c, r);
            plan_channel_block(plan, prefix + ".channel", s + 1, cfg, c, r);
        }
        if (s < 3) {
            plan.layers.push_back(conv_plan("merge" + std::to_string(s + 1), 0,
                                            pointwise(4 * c, 2 * c), r / 2, r / 2));
        }
    }

    const Index c1 = cfg.base_width;
    const Index r1 = cfg.stage_resolution(0);
    ConvSpec s13{c1, 4 * c1, 4, 4, 4, 4, 0, 0, 1, true};
    plan.layers.push_back(conv_plan("skip_1_to_3", 0, s13, r1, r1));
    ConvSpec s24{2 * c1, 8 * c1, 4, 4, 4, 4, 0, 0, 1, true};
    plan.layers.push_back(conv_plan("skip_2_to_4", 0, s24, r1 / 2, r1 / 2));

    plan.layers.push_back(linear_plan("head", 5, 8 * c1, cfg.classes));
    return plan;
}

CostTotals plan_totals(const ModelPlan& plan) {
    CostTotals t;
    for (const LayerPlan& l : plan.layers) {
        t.weights += l.weight_params();
        t.biases += l.bias_params();
        t.flops += l.flops();
    }
    return t;
}

std::array<CostTotals, 6> plan_per_stage(const ModelPlan& plan) {
    std::array<CostTotals, 6> out{};
    for (const LayerPlan& l : plan.layers) {
        CostTotals& t = out[static_cast<std::size_t>(l.stage)];
        t.weights += l.weight_params();
        t.biases += l.bias_params();
        t.flops += l.flops();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Closed-form analysis
// ---------------------------------------------------------------------------

Index strip_interaction_params(Index h, Index w, Index p, Index k) {
    return k * p * (h * h + w * w);
}

Index strip_interaction_flops(Index c, Index h, Index w, Index k) {
    return k * c * h * w * (h + w);
}

Index strip_fusion_params(Index c) { return 4 * c * c; }

Index strip_fusion_flops(Index c, Index h, Index w) { return 4 * h * w * c * c; }

SparseMlpCosts sparse_mlp_baseline(Index h, Index w, Index c) {
    if (h < 1 || w < 1 || c < 1) {
        throw ConfigError("sparse_mlp_baseline needs positive dims");
    }
    SparseMlpCosts r;
    r.interaction_params = w * w + h * h;
    r.interaction_flops = c * h * w * (h + w);
    r.fusion_params = 3 * c * c;
    r.fusion_flops = 3 * h * w * c * c;
    return r;
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

Cell make_cell(std::string label, Index exact, const char* unit) {
    Cell c;
    c.label = std::move(label);
    c.exact = exact;
    c.unit = unit;
    const double scale = (c.unit == "k") ? 1e3 : 1e6;
    c.display = round2(static_cast<double>(exact) / scale);
    return c;
}

// Displayed values normalized to a common unit (k) for derived numbers.
double in_k(const Cell& c) { return c.unit == "k" ? c.display : c.display * 1e3; }

}  // namespace

Table1Report table1_report() {
    const Index h1 = 56, w1 = 56, c1 = 112;
    const Index h4 = 7, w4 = 7, c4 = 896;

    Table1Report r;
    const SparseMlpCosts sp1 = sparse_mlp_baseline(h1, w1, c1);
    const SparseMlpCosts sp4 = sparse_mlp_baseline(h4, w4, c4);
    r.sparse_s1_params =
        make_cell("sparse stage1 interaction params", sp1.interaction_params, "k");
    r.sparse_s1_flops =
        make_cell("sparse stage1 interaction flops", sp1.interaction_flops, "M");
    r.sparse_s4_params =
        make_cell("sparse stage4 interaction params", sp4.interaction_params, "k");
    r.sparse_s4_flops =
        make_cell("sparse stage4 interaction flops", sp4.interaction_flops, "M");
    r.sparse_fusion_params = make_cell("sparse stage4 fusion params", sp4.fusion_params, "M");
    r.sparse_fusion_flops = make_cell("sparse stage4 fusion flops", sp4.fusion_flops, "M");

    r.strip_s1_params = make_cell("strip stage1 interaction params",
                                  strip_interaction_params(h1, w1, c1 / 4), "k");
    r.strip_s1_flops = make_cell("strip stage1 interaction flops",
                                 strip_interaction_flops(c1, h1, w1), "M");
    r.strip_s4_params = make_cell("strip stage4 interaction params",
                                  strip_interaction_params(h4, w4, c4 / 4), "k");
    r.strip_s4_flops = make_cell("strip stage4 interaction flops",
                                 strip_interaction_flops(c4, h4, w4), "M");
    r.strip_fusion_params =
        make_cell("strip stage4 fusion params", strip_fusion_params(c4), "M");
    r.strip_fusion_flops =
        make_cell("strip stage4 fusion flops", strip_fusion_flops(c4, h4, w4), "M");

    r.sparse_params_change = in_k(r.sparse_s1_params) / in_k(r.sparse_s4_params);
    r.sparse_flops_change = in_k(r.sparse_s1_flops) / in_k(r.sparse_s4_flops);
    r.strip_params_change = in_k(r.strip_s1_params) / in_k(r.strip_s4_params);
    r.strip_flops_change = in_k(r.strip_s1_flops) / in_k(r.strip_s4_flops);

    auto proportion = [](const Cell& part, const Cell& fusion) {
        return 100.0 * in_k(part) / (in_k(part) + in_k(fusion));
    };
    r.sparse_prop_params = proportion(r.sparse_s4_params, r.sparse_fusion_params);
    r.sparse_prop_flops = proportion(r.sparse_s4_flops, r.sparse_fusion_flops);
    r.strip_prop_params = proportion(r.strip_s4_params, r.strip_fusion_params);
    r.strip_prop_flops = proportion(r.strip_s4_flops, r.strip_fusion_flops);
    return r;
}

namespace {

std::string fmt2(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

std::string cell_str(const Cell& c) { return fmt2(c.display) + c.unit; }

}  // namespace

std::string table1_text(const Table1Report& r) {
    std::ostringstream os;
    os << "Token interaction cost, strip vs. sparse axial design\n";
    os << "(H1=W1=56, H4=W4=7, C1=112, C4=896, P=C/4, strip width 3;\n";
    os << " FLOPs are multiply-accumulate counts; exact integers below)\n\n";
    auto row = [&](const std::string& label, const std::string& a, const std::string& b,
                   const std::string& c, const std::string& d) {
        os << std::left << std::setw(16) << label << std::right << std::setw(13) << a
           << std::setw(13) << b << std::setw(13) << c << std::setw(13) << d << "\n";
    };
    row("Items", "Sparse Params", "FLOPs", "Strip Params", "FLOPs");
    row("Stage 1", cell_str(r.sparse_s1_params), cell_str(r.sparse_s1_flops),
        cell_str(r.strip_s1_params), cell_str(r.strip_s1_flops));
    row("Stage 4", cell_str(r.sparse_s4_params), cell_str(r.sparse_s4_flops),
        cell_str(r.strip_s4_params), cell_str(r.strip_s4_flops));
    row("Changes", "v" + fmt2(r.sparse_params_change), "v" + fmt2(r.sparse_flops_change),
        "v" + fmt2(r.strip_params_change), "v" + fmt2(r.strip_flops_change));
    row("Stage 4 Fusion", cell_str(r.sparse_fusion_params), cell_str(r.sparse_fusion_flops),
        cell_str(r.strip_fusion_params), cell_str(r.strip_fusion_flops));
    row("Proportion", fmt2(r.sparse_prop_params) + "%", fmt2(r.sparse_prop_flops) + "%",
        fmt2(r.strip_prop_params) + "%", fmt2(r.strip_prop_flops) + "%");
    os << "\nExact integers:\n";
    for (const Cell* c :
         {&r.sparse_s1_params, &r.sparse_s1_flops, &r.sparse_s4_params, &r.sparse_s4_flops,
          &r.sparse_fusion_params, &r.sparse_fusion_flops, &r.strip_s1_params,
          &r.strip_s1_flops, &r.strip_s4_params, &r.strip_s4_flops, &r.strip_fusion_params,
          &r.strip_fusion_flops}) {
        os << "  " << std::left << std::setw(36) << c->label << " = " << c->exact << " ("
           << cell_str(*c) << ")\n";
    }
    return os.str();
}

namespace {

json cell_json(const Cell& c) {
    return json{{"label", c.label}, {"exact", c.exact}, {"display", c.display},
                {"unit", c.unit}};
}

}  // namespace

std::string table1_json(const Table1Report& r) {
    json j;
    j["protocol"] = {{"h1", 56},      {"w1", 56}, {"c1", 112},
                     {"h4", 7},       {"w4", 7},  {"c4", 896},
                     {"patch_policy", "c4"},      {"strip_width", 3},
                     {"flops_convention", "multiply-accumulate"}};
    j["cells"] = json::array();
    for (const Cell* c :
         {&r.sparse_s1_params, &r.sparse_s1_flops, &r.sparse_s4_params, &r.sparse_s4_flops,
          &r.sparse_fusion_params, &r.sparse_fusion_flops, &r.strip_s1_params,
          &r.strip_s1_flops, &r.strip_s4_params, &r.strip_s4_flops, &r.strip_fusion_params,
          &r.strip_fusion_flops}) {
        j["cells"].push_back(cell_json(*c));
    }
    j["changes"] = {{"sparse_params", round2(r.sparse_params_change)},
                    {"sparse_flops", round2(r.sparse_flops_change)},
                    {"strip_params", round2(r.strip_params_change)},
                    {"strip_flops", round2(r.strip_flops_change)}};
    j["proportions_percent"] = {{"sparse_params", r.sparse_prop_params},
                                {"sparse_flops", r.sparse_prop_flops},
                                {"strip_params", r.strip_prop_params},
                                {"strip_flops", r.strip_prop_flops}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Whole-model reports
// ---------------------------------------------------------------------------

namespace {

std::string human(Index v) {
    std::ostringstream os;
    if (v >= 1000000000) {
        os << std::fixed << std::setprecision(2) << static_cast<double>(v) / 1e9 << "G";
    } else if (v >= 1000000) {
        os << std::fixed << std::setprecision(2) << static_cast<double>(v) / 1e6 << "M";
    } else if (v >= 1000) {
        os << std::fixed << std::setprecision(2) << static_cast<double>(v) / 1e3 << "k";
    } else {
        os << v;
    }
    return os.str();
}

std::string stage_name(std::size_t i) {
    if (i == 0) {
        return "stem/merge/skip";
    }
    if (i == 5) {
        return "head";
    }
    return "stage" + std::to_string(i);
}

}  // namespace

std::string analyze_text(const ModelPlan& plan) {
    const auto stages = plan_per_stage(plan);
    const CostTotals total = plan_totals(plan);
    std::ostringstream os;
    os << "Model cost breakdown (C=" << plan.cfg.base_width << ", depths {"
       << plan.cfg.depths[0] << "," << plan.cfg.depths[1] << "," << plan.cfg.depths[2]
       << "," << plan.cfg.depths[3] << "}, patch " << plan.cfg.patch_size << ", "
       << plan.cfg.resolution << "x" << plan.cfg.resolution << ", classes "
       << plan.cfg.classes << ", patches " << patch_policy_name(plan.cfg.patches) << ")\n";
    os << "FLOPs are conv/linear multiply-accumulate counts per image.\n\n";
    os << std::left << std::setw(18) << "scope" << std::right << std::setw(14) << "weights"
       << std::setw(12) << "biases" << std::setw(16) << "flops" << "\n";
    auto row = [&](const std::string& label, const CostTotals& t) {
        os << std::left << std::setw(18) << label << std::right << std::setw(14)
           << t.weights << std::setw(12) << t.biases << std::setw(16) << t.flops << "   ("
           << human(t.params()) << " params, " << human(t.flops) << " MACs)\n";
    };
    for (std::size_t i = 0; i < stages.size(); ++i) {
        row(stage_name(i), stages[i]);
    }
    row("total", total);
    os << "\nTotal parameters: " << total.params() << " (" << human(total.params())
       << ")\nTotal FLOPs/image: " << total.flops << " (" << human(total.flops) << ")\n";
    return os.str();
}

std::string analyze_json(const ModelPlan& plan) {
    const auto stages = plan_per_stage(plan);
    const CostTotals total = plan_totals(plan);
    json j;
    j["config"] = {{"base_width", plan.cfg.base_width},
                   {"depths", plan.cfg.depths},
                   {"patch_size", plan.cfg.patch_size},
                   {"classes", plan.cfg.classes},
                   {"resolution", plan.cfg.resolution},
                   {"patches", patch_policy_name(plan.cfg.patches)},
                   {"strip_width", plan.cfg.strip_width},
                   {"eq1_ratio", plan.cfg.eq1_ratio},
                   {"channel_ratio", plan.cfg.channel_ratio}};
    j["flops_convention"] = "conv/linear multiply-accumulate per image";
    j["rows"] = json::array();
    auto add_row = [&](const std::string& label, const CostTotals& t) {
        j["rows"].push_back({{"scope", label},
                             {"params_weights", t.weights},
                             {"params_biases", t.biases},
                             {"flops", t.flops}});
    };
    for (std::size_t i = 0; i < stages.size(); ++i) {
        add_row(stage_name(i), stages[i]);
    }
    j["total"] = {{"params", total.params()},
                  {"params_weights", total.weights},
                  {"params_biases", total.biases},
                  {"flops", total.flops}};
    return j.dump(2);
}

}  // namespace stripmlp::cost
