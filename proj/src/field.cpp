#include "s3f/field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace s3f {

using nn::Value;
using nn::TensorShape;
using namespace nn::ops;

namespace {

FieldHead make_head(nn::ParamStore& store, const std::string& name, const FieldConfig& cfg,
                    int out_dim, bool zero_out, Rng& rng) {
    FieldHead h;
    int enc_in = 3 * (1 + 2 * cfg.posenc_freqs);
    h.enc0 = nn::make_linear(store, name + ".enc0", enc_in, cfg.key_dim, rng);
    h.enc1 = nn::make_linear(store, name + ".enc1", cfg.key_dim, cfg.key_dim, rng);
    int in = cfg.value_dim + cfg.key_dim;  // master feature + query embedding
    h.mlp0 = nn::make_linear(store, name + ".mlp0", in, cfg.head_width, rng);
    h.mlp1 = nn::make_linear(store, name + ".mlp1", cfg.head_width, cfg.head_width, rng);
    h.mlp2 = nn::make_linear(store, name + ".mlp2", cfg.head_width + in, cfg.head_width, rng);
    h.mlp3 = nn::make_linear(store, name + ".mlp3", cfg.head_width, cfg.head_width, rng);
    h.out = nn::make_linear(store, name + ".out", cfg.head_width, out_dim, rng, zero_out);
    return h;
}

Value embed(const FieldHead& h, const Value& pts, int freqs) {
    return h.enc1(swish(h.enc0(nn::positional_encoding(pts, freqs))));
}

// 4-layer trunk with the input skip into layer 3.
Value head_trunk(const FieldHead& h, const Value& master, const Value& query_embed) {
    Value in = concat_cols(master, query_embed);
    Value v = swish(h.mlp0(in));
    v = swish(h.mlp1(v));
    v = swish(h.mlp2(concat_cols(v, in)));
    v = swish(h.mlp3(v));
    return h.out(v);
}

}  // namespace

FieldModel make_field_model(nn::ParamStore& store, const FieldConfig& cfg, int illum_dim,
                            Rng& rng) {
    FieldModel m;
    m.cfg = cfg;
    m.geo = make_head(store, "geo", cfg, 1, /*zero_out=*/true, rng);
    m.alb = make_head(store, "alb", cfg, 3, /*zero_out=*/false, rng);
    // Small positive bias keeps the ReLU output layer live at init.
    m.shading.l0 = nn::make_linear(store, "shade.l0", 3 + illum_dim, 32, rng, false, 0.1);
    m.shading.l1 = nn::make_linear(store, "shade.l1", 32, 32, rng, false, 0.1);
    m.shading.l2 = nn::make_linear(store, "shade.l2", 32, 3, rng, false, 0.1);
    return m;
}

Value body_sdf_values(const Value& x, const PosedBody& body) {
    if (x.shape().rank != 2 || x.shape().dims[1] != 3)
        throw std::invalid_argument("body_sdf_values needs (N,3)");
    int n = x.shape().dims[0];
    Value out = Value::zeros(TensorShape::vec(n));
    const auto& d = x.data();
    auto& y = out.data_mut();
    for (int i = 0; i < n; ++i) y[i] = body.sdf({d[3 * i], d[3 * i + 1], d[3 * i + 2]});

    // Analytic gradient, captured as a constant.
    Value normals = Value::zeros(TensorShape::mat(n, 3));
    auto& nd = normals.data_mut();
    for (int i = 0; i < n; ++i) {
        Vec3 g = body.sdf_gradient({d[3 * i], d[3 * i + 1], d[3 * i + 2]});
        nd[3 * i] = g.x;
        nd[3 * i + 1] = g.y;
        nd[3 * i + 2] = g.z;
    }
    nn::record_entry({x}, out, [x, normals](const Value& g, nn::GradSink& sink) {
        if (sink.wants(x)) sink.add(x, mul_rowscale(normals, g));
    });
    return out;
}

FieldContext make_field_context(const FieldModel& model, const StructuredFeatures& sf,
                                const PosedBody& body) {
    FieldContext ctx;
    ctx.sf = sf;
    ctx.body = body;
    if (!model.cfg.use_3nn) {
        ctx.geo_keys = embed(model.geo, sf.positions, model.cfg.posenc_freqs);
        ctx.alb_keys = embed(model.alb, sf.positions, model.cfg.posenc_freqs);
    }
    return ctx;
}

Value knn3_pool(const Value& x, const Value& positions, const Value& features,
                std::vector<int>* out_idx, Value* out_weights) {
    int b = x.shape().dims[0];
    int n = positions.shape().dims[0];
    int k = features.shape().dims[1];
    if (n < 3) throw std::invalid_argument("knn3_pool needs at least 3 points");

    const auto& xp = x.data();
    const auto& pp = positions.data();
    std::vector<int> flat(3 * (size_t)b);
    std::vector<int> rep(3 * (size_t)b);
    for (int i = 0; i < b; ++i) {
        int best[3] = {-1, -1, -1};
        double bd[3] = {1e30, 1e30, 1e30};
        for (int j = 0; j < n; ++j) {
            double dx = xp[3 * i] - pp[3 * j], dy = xp[3 * i + 1] - pp[3 * j + 1],
                   dz = xp[3 * i + 2] - pp[3 * j + 2];
            double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < bd[0]) {
                bd[2] = bd[1]; best[2] = best[1];
                bd[1] = bd[0]; best[1] = best[0];
                bd[0] = d2; best[0] = j;
            } else if (d2 < bd[1]) {
                bd[2] = bd[1]; best[2] = best[1];
                bd[1] = d2; best[1] = j;
            } else if (d2 < bd[2]) {
                bd[2] = d2; best[2] = j;
            }
        }
        for (int s = 0; s < 3; ++s) {
            flat[3 * (size_t)i + s] = best[s];
            rep[3 * (size_t)i + s] = i;
        }
    }
    if (out_idx) *out_idx = flat;

    // Normalized inverse distances, floored at 1e-8.
    Value sel = gather_rows(positions, flat);             // (3B,3)
    Value xr = gather_rows(x, rep);                       // (3B,3)
    Value dist = sqrt(add_const(row_sums(square(sub(xr, sel))), 1e-30));
    Value inv = div(Value::full(dist.shape(), 1.0), clamp(dist, 1e-8, 1e30));
    Value w3 = reshape(inv, TensorShape::mat(b, 3));
    Value wn = div(w3, rep_cols(row_sums(w3), 3));        // (B,3)
    if (out_weights) *out_weights = wn;

    Value gf = gather_rows(features, flat);               // (3B,k)
    Value weighted = mul_rowscale(gf, reshape(wn, TensorShape::vec(3 * b)));
    return sum_mid(reshape(weighted, TensorShape{b, 3, k}));
}

namespace {

struct HeadOut {
    Value geo_raw;  // (B,1)
    Value alb_raw;  // (B,3), pre-sigmoid
};

HeadOut run_heads(const FieldModel& model, const FieldContext& ctx, const Value& xc,
                  bool want_albedo) {
    const StructuredFeatures& sf = ctx.sf;
    HeadOut out;
    if (model.cfg.use_3nn) {
        Value master = knn3_pool(xc, sf.positions, sf.features);
        Value qg = embed(model.geo, xc, model.cfg.posenc_freqs);
        out.geo_raw = head_trunk(model.geo, master, qg);
        if (want_albedo) {
            Value qa = embed(model.alb, xc, model.cfg.posenc_freqs);
            out.alb_raw = head_trunk(model.alb, master, qa);
        }
        return out;
    }
    Value qg = embed(model.geo, xc, model.cfg.posenc_freqs);
    Value fg = nn::attention(qg, ctx.geo_keys, sf.features);
    out.geo_raw = head_trunk(model.geo, fg, qg);
    if (want_albedo) {
        Value qa = embed(model.alb, xc, model.cfg.posenc_freqs);
        Value fa = nn::attention(qa, ctx.alb_keys, sf.features);
        out.alb_raw = head_trunk(model.alb, fa, qa);
    }
    return out;
}

FieldQuery query_impl(const FieldModel& model, const FieldContext& ctx, const Value& x,
                      bool want_albedo) {
    if (x.shape().rank != 2 || x.shape().dims[1] != 3)
        throw std::invalid_argument("query_field needs (B,3)");
    if (!ctx.sf.positions.defined() || ctx.sf.positions.shape().dims[0] == 0)
        throw std::invalid_argument("query_field: empty structured features");
    int b = x.shape().dims[0];
    int chunk = std::max(1, model.cfg.chunk);

    Value res_acc, alb_acc;
    for (int start = 0; start < b; start += chunk) {
        int end = std::min(b, start + chunk);
        Value xc = (start == 0 && end == b) ? x : slice_rows(x, start, end);
        HeadOut heads = run_heads(model, ctx, xc, want_albedo);
        Value res = scale(ops::tanh(heads.geo_raw), model.cfg.ds_max);  // (B,1)
        res_acc = res_acc.defined() ? concat_rows(res_acc, res) : res;
        if (want_albedo) {
            Value a = sigmoid(heads.alb_raw);
            alb_acc = alb_acc.defined() ? concat_rows(alb_acc, a) : a;
        }
    }

    FieldQuery q;
    q.residual = reshape(res_acc, TensorShape::vec(b));
    q.s = add(body_sdf_values(x, ctx.body), q.residual);
    if (want_albedo) q.albedo = alb_acc;
    return q;
}

}  // namespace

FieldQuery query_field(const FieldModel& model, const FieldContext& ctx, const Value& x) {
    return query_impl(model, ctx, x, /*want_albedo=*/true);
}

Value query_sdf(const FieldModel& model, const FieldContext& ctx, const Value& x) {
    return query_impl(model, ctx, x, /*want_albedo=*/false).s;
}

Value field_normals(nn::Tape& tape, const Value& s, const Value& x, bool create_graph) {
    Value wrt[] = {x};
    return tape.gradient(s, wrt, create_graph)[0];
}

Value shade_points(const FieldModel& model, const Value& normals, const Value& illumination) {
    int b = normals.shape().dims[0];
    if (!model.cfg.shading) return Value::full(TensorShape::mat(b, 3), 1.0);

    Value in = concat_cols(normals, rep_rows(illumination, b));
    Value h = relu(model.shading.l0(in));
    h = relu(model.shading.l1(h));
    Value delta = relu(model.shading.l2(h));

    // Zero-gradient rows fall back to delta = 1.
    const auto& nd = normals.data();
    bool any_degenerate = false;
    Value keep = Value::zeros(TensorShape::vec(b));
    Value fall = Value::zeros(TensorShape::vec(b));
    for (int i = 0; i < b; ++i) {
        double n2 = nd[3 * i] * nd[3 * i] + nd[3 * i + 1] * nd[3 * i + 1] +
                    nd[3 * i + 2] * nd[3 * i + 2];
        bool degenerate = n2 < 1e-24;
        any_degenerate |= degenerate;
        keep.data_mut()[i] = degenerate ? 0.0 : 1.0;
        fall.data_mut()[i] = degenerate ? 1.0 : 0.0;
    }
    if (!any_degenerate) return delta;
    return add(mul_rowscale(delta, keep), rep_cols(fall, 3));
}

Value shaded_color(const Value& albedo, const Value& delta) { return mul(delta, albedo); }

}  // namespace s3f
