#pragma once

#include "s3f/s3f.hpp"

namespace s3f {

struct FieldConfig {
    int key_dim = 64;       // shared point/query embedding width
    int value_dim = 24;     // = S3F feature channels
    int head_width = 128;   // geometry/albedo MLP width
    int posenc_freqs = 6;
    double ds_max = 0.5;    // residual saturation, meters
    int chunk = 1024;       // queries per attention call
    bool use_3nn = false;   // ablation: 3-NN pooling instead of attention
    bool shading = true;    // ablation: "no shading" fixes delta = 1
};

// One transformer head: shared 2-layer point/query embedding, then a 4-layer
// MLP (width head_width, input skip into layer 3, Swish) and an output layer.
struct FieldHead {
    nn::Linear enc0, enc1;
    nn::Linear mlp0, mlp1, mlp2, mlp3, out;
};

// Shading network p(n, L): three layers with ReLU including the output.
struct ShadingNet {
    nn::Linear l0, l1, l2;
};

struct FieldModel {
    FieldConfig cfg;
    FieldHead geo;   // -> signed-distance residual, zero-initialized output
    FieldHead alb;   // -> albedo, sigmoid output
    ShadingNet shading;
};

FieldModel make_field_model(nn::ParamStore& store, const FieldConfig& cfg, int illum_dim,
                            Rng& rng);

// Exact body SDF as a differentiable op (analytic gradient; the body is not
// trainable, so treating the gradient as locally constant is exact for all
// orders used here).
nn::Value body_sdf_values(const nn::Value& x, const PosedBody& body);

// Per-scene cache: the structured features, the posed body driving the SDF
// prior, and the embedded attention keys for both heads.
struct FieldContext {
    StructuredFeatures sf;
    PosedBody body;
    nn::Value geo_keys, alb_keys;  // (N, key_dim)
};
FieldContext make_field_context(const FieldModel& model, const StructuredFeatures& sf,
                                const PosedBody& body);

struct FieldQuery {
    nn::Value s;        // (B)   signed distance = body sdf + residual
    nn::Value residual; // (B)
    nn::Value albedo;   // (B,3) in (0,1)
};

// Evaluates the field at x (a (B,3) leaf Value), chunked internally.
FieldQuery query_field(const FieldModel& model, const FieldContext& ctx, const nn::Value& x);

// Geometry-only variant (skips the albedo head).
nn::Value query_sdf(const FieldModel& model, const FieldContext& ctx, const nn::Value& x);

// n = grad_x s via the tape; create_graph makes the result differentiable
// (training); otherwise it is a plain value (inference).
nn::Value field_normals(nn::Tape& tape, const nn::Value& s, const nn::Value& x,
                        bool create_graph);

// delta = p(n, L), with the documented fallback delta = 1 on zero-gradient
// rows, or identically 1 in the no-shading ablation. c = delta * albedo.
nn::Value shade_points(const FieldModel& model, const nn::Value& normals,
                       const nn::Value& illumination);
nn::Value shaded_color(const nn::Value& albedo, const nn::Value& delta);

// 3-NN inverse-distance pooling (the non-attention baseline). Returns the
// pooled features; optionally exposes the chosen indices and normalized
// weights for inspection.
nn::Value knn3_pool(const nn::Value& x, const nn::Value& positions, const nn::Value& features,
                    std::vector<int>* out_idx = nullptr, nn::Value* out_weights = nullptr);

}  // namespace s3f
