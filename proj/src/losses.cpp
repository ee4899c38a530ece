#include "s3f/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace s3f {

using nn::Value;
using nn::TensorShape;
using namespace nn::ops;

std::vector<std::pair<int, int>> sample_pixels(const Image& mask, int count, double fg_fraction,
                                               Rng& rng) {
    std::vector<std::pair<int, int>> fg, bg;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            (mask.at(y, x, 0) > 0.5 ? fg : bg).push_back({x, y});
    if (fg.empty()) throw std::runtime_error("sample_pixels: empty foreground mask");

    int want_fg = (int)std::floor(fg_fraction * count);
    std::vector<std::pair<int, int>> out;
    out.reserve(count);
    for (int i = 0; i < want_fg; ++i) out.push_back(fg[rng.index(fg.size())]);
    for (int i = want_fg; i < count; ++i) {
        // Background draws fall back to foreground for all-foreground masks.
        if (bg.empty()) {
            out.push_back(fg[rng.index(fg.size())]);
        } else {
            out.push_back(bg[rng.index(bg.size())]);
        }
    }
    return out;
}

RealObservation real_observation(const SceneBundle& scene) {
    return {&scene.rgb[0], &scene.mask[0], &scene.cameras[0], &scene.fit_pose, &scene.fit_shape};
}

RealObservation synth_observation(const SceneBundle& scene) {
    return {&scene.rgb[0], &scene.mask[0], &scene.cameras[0], &scene.pose, &scene.shape};
}

double bce(double label, double p) {
    p = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

namespace {

Value mean_l1(const Value& a, const Value& b) { return mean_all(ops::abs(sub(a, b))); }

// Sum of mean |grad| differences of two (S,S) images, horizontal + vertical.
Value gradient_l1(const Value& img, const Value& ref) {
    int s = img.shape().dims[0];
    Value dx_i = sub(slice_cols(img, 1, s), slice_cols(img, 0, s - 1));
    Value dx_r = sub(slice_cols(ref, 1, s), slice_cols(ref, 0, s - 1));
    Value dy_i = sub(slice_rows(img, 1, s), slice_rows(img, 0, s - 1));
    Value dy_r = sub(slice_rows(ref, 1, s), slice_rows(ref, 0, s - 1));
    return add(mean_l1(dx_i, dx_r), mean_l1(dy_i, dy_r));
}

// Multi-scale image-gradient loss between a rendered patch and its ground
// truth, both (3, S, S).
Value patch_gradient_loss(const Value& patch, const Value& ref) {
    Value total;
    Value p = patch, r = ref;
    for (int scale = 0; scale < 2; ++scale) {
        int s = p.shape().dims[1];
        for (int c = 0; c < 3; ++c) {
            Value pf = reshape(p, TensorShape::mat(3 * s, s));
            Value rf = reshape(r, TensorShape::mat(3 * s, s));
            Value pc = slice_rows(pf, c * s, (c + 1) * s);
            Value rc = slice_rows(rf, c * s, (c + 1) * s);
            Value g = gradient_l1(pc, rc);
            total = total.defined() ? add(total, g) : g;
        }
        if (scale == 0) {
            p = avgpool2(p);
            r = avgpool2(r);
        }
    }
    return scale(total, 1.0 / 6.0);
}

Value eikonal_loss(Pipeline& model, const FieldContext& ctx, const KinematicTree& tree,
                   const Pose& pose, const ShapeParams& shape, const SamplingConfig& sampling,
                   Rng& rng) {
    nn::Tape* tape = nn::Tape::active();
    auto tmpl = model.surface_template();
    auto tf = forward_kinematics(tree, pose, shape);
    std::vector<Vec3> body_pts = skin_points(*tmpl, tf);

    int count = sampling.eikonal_points;
    Value x = Value::zeros(TensorShape::mat(count, 3));
    auto& d = x.data_mut();
    for (int i = 0; i < count; ++i) {
        Vec3 p = body_pts[rng.index(body_pts.size())] + rng.normal_vec3(sampling.eikonal_noise);
        d[3 * i] = p.x;
        d[3 * i + 1] = p.y;
        d[3 * i + 2] = p.z;
    }
    x.set_requires_grad(true);

    Value s = query_sdf(model.field(), ctx, x);
    Value g = field_normals(*tape, s, x, /*create_graph=*/true);
    Value gn = sqrt(add_const(row_sums(square(g)), 1e-24));
    return mean_all(square(add_const(gn, -1.0)));
}

}  // namespace

LossBreakdown image_losses(Pipeline& model, const RealObservation& obs, const LossWeights& w,
                           const SamplingConfig& sampling, Rng& rng,
                           Pipeline::ViewForward& fwd) {
    if (!nn::Tape::active()) throw std::logic_error("image_losses needs an active tape");
    fwd = model.forward_view(*obs.rgb, *obs.mask, *obs.camera, *obs.pose, *obs.shape);
    PosedBody body = pose_body(model.tree(), *obs.pose, *obs.shape);
    Value beta = model.beta();

    LossBreakdown out;

    // Ray losses on sampled pixels.
    auto pix = sample_pixels(*obs.mask, sampling.pixels, sampling.fg_fraction, rng);
    std::vector<std::pair<double, double>> pixf;
    Value gt_color = Value::zeros(TensorShape::mat((int)pix.size(), 3));
    Value gt_mask = Value::zeros(TensorShape::vec((int)pix.size()));
    for (size_t i = 0; i < pix.size(); ++i) {
        auto [x, y] = pix[i];
        pixf.push_back({(double)x, (double)y});
        for (int c = 0; c < 3; ++c) gt_color.data_mut()[3 * i + c] = obs.rgb->at(y, x, c);
        gt_mask.data_mut()[i] = obs.mask->at(y, x, 0) > 0.5 ? 1.0 : 0.0;
    }
    RayBatch rays = make_rays(*obs.camera, pixf, body, model.render_config());
    RenderResult rr = render_rays(model.field(), fwd.ctx, rays, beta, fwd.illumination,
                                  /*create_graph_normals=*/true);
    Value l_rgb = mean_l1(rr.color, gt_color);
    Value l_mask = mean_l1(rr.opacity, gt_mask);

    // Structural patch, centered on a random foreground pixel.
    auto center = sample_pixels(*obs.mask, 1, 1.0, rng)[0];
    int s = sampling.patch_size;
    int x0 = std::clamp(center.first - s / 2, 0, obs.rgb->width - s);
    int y0 = std::clamp(center.second - s / 2, 0, obs.rgb->height - s);
    std::vector<std::pair<double, double>> patch_pix;
    Value gt_patch = Value::zeros(TensorShape{3, s, s});
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            patch_pix.push_back({(double)(x0 + x), (double)(y0 + y)});
            for (int c = 0; c < 3; ++c)
                gt_patch.data_mut()[((size_t)c * s + y) * s + x] = obs.rgb->at(y0 + y, x0 + x, c);
        }
    RenderConfig patch_cfg = model.render_config();
    patch_cfg.ray_samples = sampling.patch_ray_samples;
    RayBatch patch_rays = make_rays(*obs.camera, patch_pix, body, patch_cfg);
    RenderResult pr = render_rays(model.field(), fwd.ctx, patch_rays, beta, fwd.illumination,
                                  /*create_graph_normals=*/true);
    Value patch = reshape(transpose(pr.color), TensorShape{3, s, s});
    Value l_patch = patch_gradient_loss(patch, gt_patch);

    Value l_eik = eikonal_loss(model, fwd.ctx, model.tree(), *obs.pose, *obs.shape, sampling, rng);

    out.rgb = l_rgb.item();
    out.patch = l_patch.item();
    out.mask = l_mask.item();
    out.eik = l_eik.item();
    out.total_value = add(add(scale(l_rgb, w.rgb), scale(l_patch, w.patch)),
                          add(scale(l_mask, w.mask), scale(l_eik, w.eik)));
    out.total = out.total_value.item();
    return out;
}

void add_3d_losses(Pipeline& model, const SceneBundle& scene, const Pipeline::ViewForward& fwd,
                   const LossWeights& w, const SamplingConfig& sampling, Rng& rng,
                   LossBreakdown& out) {
    if (scene.gt_surface.empty() || scene.gt_labels.empty())
        throw std::runtime_error("synthetic branch requires stored 3D ground truth");
    nn::Tape* tape = nn::Tape::active();

    // Surface albedo / shaded color supervision.
    int ns = sampling.surface_points;
    Value xs = Value::zeros(TensorShape::mat(ns, 3));
    Value gt_albedo = Value::zeros(TensorShape::mat(ns, 3));
    Value gt_shaded = Value::zeros(TensorShape::mat(ns, 3));
    for (int i = 0; i < ns; ++i) {
        const auto& rec = scene.gt_surface[rng.index(scene.gt_surface.size())];
        for (int c = 0; c < 3; ++c) {
            xs.data_mut()[3 * i + c] = rec.pos[c];
            gt_albedo.data_mut()[3 * i + c] = rec.albedo[c];
            gt_shaded.data_mut()[3 * i + c] = rec.shaded[c];
        }
    }
    xs.set_requires_grad(true);
    FieldQuery q = query_field(model.field(), fwd.ctx, xs);
    Value n = field_normals(*tape, q.s, xs, /*create_graph=*/true);
    Value delta = shade_points(model.field(), n, fwd.illumination);
    Value shaded = shaded_color(q.albedo, delta);
    Value l_rgb3d = add(mean_l1(q.albedo, gt_albedo), mean_l1(shaded, gt_shaded));

    // Inside/outside supervision through the density.
    int nl = sampling.near_points;
    Value xl = Value::zeros(TensorShape::mat(nl, 3));
    Value labels = Value::zeros(TensorShape::vec(nl));
    for (int i = 0; i < nl; ++i) {
        const auto& rec = scene.gt_labels[rng.index(scene.gt_labels.size())];
        for (int c = 0; c < 3; ++c) xl.data_mut()[3 * i + c] = rec.pos[c];
        labels.data_mut()[i] = rec.inside ? 1.0 : 0.0;
    }
    Value s = query_sdf(model.field(), fwd.ctx, xl);
    Value sigma = laplace_density(s, model.beta());
    Value p = add_const(neg(ops::exp(scale(sigma, -sampling.delta_ref))), 1.0);
    Value pc = clamp(p, 1e-6, 1.0 - 1e-6);
    Value one_minus = add_const(neg(labels), 1.0);
    Value l_label = neg(mean_all(add(mul(labels, ops::log(pc)),
                                     mul(one_minus, ops::log(add_const(neg(pc), 1.0))))));

    out.rgb3d = l_rgb3d.item();
    out.label3d = l_label.item();
    Value extra = add(scale(l_rgb3d, w.rgb3d), scale(l_label, w.label3d));
    out.total_value = add(out.total_value, extra);
    out.total = out.total_value.item();
}

}  // namespace s3f
