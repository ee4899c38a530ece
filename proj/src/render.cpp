#include "s3f/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace s3f {

using nn::Value;
using nn::TensorShape;
using namespace nn::ops;

double density(double s, double beta) {
    if (!(beta > 0)) throw std::invalid_argument("density: beta must be positive");
    return s >= 0 ? 0.5 / beta * std::exp(-s / beta) : (1.0 - 0.5 * std::exp(s / beta)) / beta;
}

RayBatch make_rays(const Camera& cam, const std::vector<std::pair<double, double>>& pixels,
                   const PosedBody& body, const RenderConfig& cfg) {
    // Body z-extent in camera space, padded.
    double z_lo = 1e30, z_hi = -1e30;
    for (const Capsule& c : body.capsules) {
        double za = cam.to_camera(c.a).z, zb = cam.to_camera(c.b).z;
        z_lo = std::min(z_lo, std::min(za, zb) - c.radius);
        z_hi = std::max(z_hi, std::max(za, zb) + c.radius);
    }
    z_lo -= cfg.bound_pad;
    z_hi += cfg.bound_pad;

    RayBatch rb;
    rb.samples = cfg.ray_samples;
    Vec3 origin = cam.origin();
    for (auto [u, v] : pixels) {
        Vec3 dir = cam.ray_direction(u, v);
        double dz = (cam.R * dir).z;  // z component in camera frame
        rb.origins.push_back(origin);
        rb.directions.push_back(dir);
        if (dz <= 1e-9 || z_hi <= std::max(z_lo, 1e-3)) {
            rb.t_near.push_back(0);
            rb.t_far.push_back(0);
            rb.empty.push_back(1);
        } else {
            double lo = std::max(z_lo, 1e-3) / dz;
            double hi = z_hi / dz;
            rb.t_near.push_back(lo);
            rb.t_far.push_back(hi);
            rb.empty.push_back(hi > lo ? 0 : 1);
        }
    }
    return rb;
}

Integrated integrate(const Value& colors, const Value& sigmas, const Value& deltas) {
    if (sigmas.shape().rank != 2) throw std::invalid_argument("integrate: sigmas must be (R,S)");
    int r = sigmas.shape().dims[0], s = sigmas.shape().dims[1];
    if (s < 1) throw std::invalid_argument("integrate: needs at least one sample");
    if (!(colors.shape() == TensorShape{r, s, 3}))
        throw std::invalid_argument("integrate: colors must be (R,S,3)");

    Value tau = mul(sigmas, deltas);                           // (R,S)
    Value trans = ops::exp(neg(cumsum_rows_exclusive(tau)));   // T_i
    Value alpha = add_const(neg(ops::exp(neg(tau))), 1.0);     // 1 - exp(-tau)
    Value w = mul(trans, alpha);                               // (R,S)

    Value flat = reshape(colors, TensorShape::mat(r * s, 3));
    Value wf = reshape(w, TensorShape::vec(r * s));
    Value weighted = reshape(mul_rowscale(flat, wf), TensorShape{r, s, 3});

    Integrated out;
    out.color = sum_mid(weighted);                              // (R,3)
    out.opacity = add_const(neg(ops::exp(neg(row_sums(tau)))), 1.0);
    return out;
}

RenderResult render_rays(const FieldModel& model, const FieldContext& ctx, const RayBatch& rays,
                         const Value& beta, const Value& illumination,
                         bool create_graph_normals) {
    nn::Tape* tape = nn::Tape::active();
    if (!tape) throw std::logic_error("render_rays needs an active tape (for normals)");
    int r_total = (int)rays.size();
    int s = rays.samples;

    std::vector<int> live;
    for (int i = 0; i < r_total; ++i)
        if (!rays.empty[i]) live.push_back(i);

    RenderResult out;
    if (live.empty()) {
        out.color = Value::zeros(TensorShape::mat(r_total, 3));
        out.opacity = Value::zeros(TensorShape::vec(r_total));
        return out;
    }
    int r = (int)live.size();

    // Sample positions at segment midpoints; spacing is (far-near)/S per ray.
    Value x = Value::zeros(TensorShape::mat(r * s, 3));
    Value deltas = Value::zeros(TensorShape::mat(r, s));
    {
        auto& xd = x.data_mut();
        auto& dd = deltas.data_mut();
        for (int k = 0; k < r; ++k) {
            int i = live[k];
            double step = (rays.t_far[i] - rays.t_near[i]) / s;
            for (int j = 0; j < s; ++j) {
                double t = rays.t_near[i] + (j + 0.5) * step;
                Vec3 p = rays.origins[i] + rays.directions[i] * t;
                size_t at = 3 * ((size_t)k * s + j);
                xd[at] = p.x;
                xd[at + 1] = p.y;
                xd[at + 2] = p.z;
                dd[(size_t)k * s + j] = step;
            }
        }
    }
    x.set_requires_grad(true);

    FieldQuery q = query_field(model, ctx, x);
    Value normals = field_normals(*tape, q.s, x, create_graph_normals);
    Value delta_coef = shade_points(model, normals, illumination);
    Value shaded = shaded_color(q.albedo, delta_coef);          // (r*s,3)

    Value sigma = laplace_density(q.s, beta);                   // (r*s)
    Integrated lit = integrate(reshape(shaded, TensorShape{r, s, 3}),
                               reshape(sigma, TensorShape::mat(r, s)), deltas);

    if (r == r_total) {
        out.color = lit.color;
        out.opacity = lit.opacity;
        return out;
    }
    // Scatter live rays back among empty (background) rays.
    out.color = scatter_add_rows(lit.color, live, r_total);
    out.opacity = reshape(
        scatter_add_rows(reshape(lit.opacity, TensorShape::mat(r, 1)), live, r_total),
        TensorShape::vec(r_total));
    return out;
}

RenderedFrame render_image(const FieldModel& model, const FieldContext& ctx, const Camera& cam,
                           const PosedBody& body, const Value& beta, const Value& illumination,
                           const RenderConfig& cfg) {
    RenderedFrame frame;
    frame.rgb = Image(cam.width, cam.height, 3);
    frame.opacity = Image(cam.width, cam.height, 1);

    const int chunk_rays = std::max(1, model.cfg.chunk / cfg.ray_samples);
    std::vector<std::pair<double, double>> pixels;
    pixels.reserve(chunk_rays);
    std::vector<std::pair<int, int>> coords;
    coords.reserve(chunk_rays);

    auto flush = [&]() {
        if (pixels.empty()) return;
        nn::Tape tape;
        nn::TapeScope scope(tape);
        RayBatch rays = make_rays(cam, pixels, body, cfg);
        RenderResult res = render_rays(model, ctx, rays, beta, illumination,
                                       /*create_graph_normals=*/false);
        for (size_t i = 0; i < coords.size(); ++i) {
            auto [px, py] = coords[i];
            for (int c = 0; c < 3; ++c)
                frame.rgb.at(py, px, c) = std::clamp(res.color.data()[3 * i + c], 0.0, 1.0);
            frame.opacity.at(py, px, 0) = std::clamp(res.opacity.data()[i], 0.0, 1.0);
        }
        pixels.clear();
        coords.clear();
    };

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            pixels.push_back({(double)x, (double)y});
            coords.push_back({x, y});
            if ((int)pixels.size() >= chunk_rays) flush();
        }
    }
    flush();
    return frame;
}

}  // namespace s3f
