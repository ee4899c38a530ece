#pragma once

#include "s3f/field.hpp"
#include "s3f/image.hpp"

namespace s3f {

struct RenderConfig {
    int ray_samples = 32;               // S; full-scale reference uses 64
    double bound_pad = 0.10;            // meters added around the body z-extent
    double beta_floor = 1e-4;
    // Grazing rays accumulate roughly sqrt(2 pi R / beta)/2 optical depth at
    // the exact silhouette, so a high threshold keeps the extracted boundary
    // within O(beta) of the surface.
    double silhouette_threshold = 0.9;
};

struct RayBatch {
    std::vector<Vec3> origins;
    std::vector<Vec3> directions;  // unit length
    std::vector<double> t_near, t_far;
    std::vector<uint8_t> empty;    // degenerate bounds: background only
    int samples = 32;

    size_t size() const { return origins.size(); }
};

// Scalar Laplace-CDF density (test/inspection convenience).
double density(double s, double beta);

// Rays through the given pixel centers; near/far from the body z-extent in
// camera space, padded by cfg.bound_pad. Samples are placed at the midpoints
// of S uniform segments.
RayBatch make_rays(const Camera& cam, const std::vector<std::pair<double, double>>& pixels,
                   const PosedBody& body, const RenderConfig& cfg);

struct Integrated {
    nn::Value color;    // (R,3) accumulated shaded color
    nn::Value opacity;  // (R)   1 - final transmittance
};

// Discrete transmittance compositing: alpha_i = 1 - exp(-sigma_i delta_i),
// T_i = prod_{j<i} (1 - alpha_j), color = sum T_i alpha_i c_i.
Integrated integrate(const nn::Value& colors /*(R,S,3)*/, const nn::Value& sigmas /*(R,S)*/,
                     const nn::Value& deltas /*(R,S)*/);

struct RenderResult {
    nn::Value color;    // (R,3)
    nn::Value opacity;  // (R)
};

// Volume-renders a ray batch through the field. Needs an active tape for the
// shading normals; pass create_graph_normals=true during training.
RenderResult render_rays(const FieldModel& model, const FieldContext& ctx, const RayBatch& rays,
                         const nn::Value& beta, const nn::Value& illumination,
                         bool create_graph_normals);

// Full-frame deterministic rendering (inference). Returns an RGB image and
// the opacity map.
struct RenderedFrame {
    Image rgb;
    Image opacity;
};
RenderedFrame render_image(const FieldModel& model, const FieldContext& ctx, const Camera& cam,
                           const PosedBody& body, const nn::Value& beta,
                           const nn::Value& illumination, const RenderConfig& cfg);

}  // namespace s3f
