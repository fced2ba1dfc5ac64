#pragma once

#include <array>
#include <string>
#include <vector>

#include "stripmlp/model.hpp"

namespace stripmlp::cost {

// FLOPs throughout this module are multiply-accumulate counts of conv and
// linear layers (1 MAC = 1 FLOP); bias additions are reported separately
// as bias parameter counts, never folded into FLOPs.

enum class LayerKind { Conv, Linear, BatchNorm, Grn };

//! One learnable layer of the network plan: enough structure to count
//! parameters and MACs without allocating tensors.
struct LayerPlan {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int stage = 0;  // 0 stem/global, 1..4 stages, 5 head
    ConvSpec conv{};
    Index conv_in_h = 0, conv_in_w = 0;  // spatial dims the conv runs on
    Index linear_in = 0, linear_out = 0, linear_rows = 1;
    Index norm_channels = 0;

    Index weight_params() const;
    Index bias_params() const;
    Index flops() const;  // per sample
};

struct ModelPlan {
    ModelConfig cfg;
    std::vector<LayerPlan> layers;
};

//! Structural twin of build_model: same layers, same names, no tensors.
ModelPlan plan_model(const ModelConfig& cfg);

struct CostTotals {
    Index weights = 0;
    Index biases = 0;
    Index flops = 0;
    Index params() const { return weights + biases; }
};

CostTotals plan_totals(const ModelPlan& plan);
//! index 0 = stem, 1..4 = stages, 5 = head/global.
std::array<CostTotals, 6> plan_per_stage(const ModelPlan& plan);

// ---------------------------------------------------------------------------
// Closed-form token-interaction analysis (strip vs. sparse axial design)
// ---------------------------------------------------------------------------

//! Strip token-interaction layer: parameters 3P(H^2+W^2) at width 3,
//! MACs 3CHW(H+W); channel-fusion step: 4C^2 parameters, 4HWC^2 MACs.
Index strip_interaction_params(Index h, Index w, Index p, Index k = 3);
Index strip_interaction_flops(Index c, Index h, Index w, Index k = 3);
Index strip_fusion_params(Index c);
Index strip_fusion_flops(Index c, Index h, Index w);

//! Sparse axial baseline: interaction W^2+H^2 params / CHW(H+W) MACs,
//! fusion 3C^2 params / 3HWC^2 MACs.
struct SparseMlpCosts {
    Index interaction_params = 0;
    Index interaction_flops = 0;
    Index fusion_params = 0;
    Index fusion_flops = 0;
};
SparseMlpCosts sparse_mlp_baseline(Index h, Index w, Index c);

//! One displayed cell: exact integer plus the two-decimal value in the
//! published unit (k or M). Ratios and proportions are derived from the
//! displayed values, mirroring the published table's own arithmetic.
struct Cell {
    std::string label;
    Index exact = 0;
    double display = 0.0;  // rounded to 2 decimals in `unit`
    std::string unit;      // "k" or "M"
};

struct Table1Report {
    // stage-1 / stage-4 token interaction and stage-4 fusion, per design
    Cell sparse_s1_params, sparse_s1_flops;
    Cell sparse_s4_params, sparse_s4_flops;
    Cell sparse_fusion_params, sparse_fusion_flops;
    Cell strip_s1_params, strip_s1_flops;
    Cell strip_s4_params, strip_s4_flops;
    Cell strip_fusion_params, strip_fusion_flops;
    // stage1/stage4 shrink factors, from displayed cells
    double sparse_params_change = 0, sparse_flops_change = 0;
    double strip_params_change = 0, strip_flops_change = 0;
    // stage-4 interaction share of the module, percent, from displayed cells
    double sparse_prop_params = 0, sparse_prop_flops = 0;
    double strip_prop_params = 0, strip_prop_flops = 0;
};

//! Fixed protocol: H1=W1=56, H4=W4=7, C1=112, C4=896, P=C/4, width 3.
Table1Report table1_report();

std::string table1_text(const Table1Report& r);
std::string table1_json(const Table1Report& r);

// ---------------------------------------------------------------------------
// Whole-model reports
// ---------------------------------------------------------------------------

std::string analyze_text(const ModelPlan& plan);
std::string analyze_json(const ModelPlan& plan);

}  // namespace stripmlp::cost
