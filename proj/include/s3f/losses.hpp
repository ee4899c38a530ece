#pragma once

#include "s3f/pipeline.hpp"

namespace s3f {

struct LossWeights {
    double rgb = 10;
    double patch = 30;   // gradient-based stand-in for a perceptual term
    double mask = 5;
    double eik = 0.1;
    double rgb3d = 200;
    double label3d = 30;
};

struct SamplingConfig {
    int pixels = 32;
    double fg_fraction = 0.75;
    int patch_size = 16;
    int patch_ray_samples = 4;
    int surface_points = 128;
    int near_points = 128;
    int eikonal_points = 128;
    double eikonal_noise = 0.10;
    double delta_ref = 0.01;
};

// Seeded pixel sampling: floor(fg_fraction*count) pixels inside the mask, the
// rest outside. Falls back to foreground draws when the background is empty;
// throws if the foreground is empty.
std::vector<std::pair<int, int>> sample_pixels(const Image& mask, int count, double fg_fraction,
                                               Rng& rng);

// What the real-data branch is allowed to see: a single image with fitted
// (noisy) body parameters and no 3D ground truth.
struct RealObservation {
    const Image* rgb = nullptr;
    const Image* mask = nullptr;
    const Camera* camera = nullptr;
    const Pose* pose = nullptr;
    const ShapeParams* shape = nullptr;
};
RealObservation real_observation(const SceneBundle& scene);   // fitted parameters
RealObservation synth_observation(const SceneBundle& scene);  // exact parameters

struct LossBreakdown {
    double rgb = 0, patch = 0, mask = 0, eik = 0;
    double rgb3d = 0, label3d = 0;
    double total = 0;
    nn::Value total_value;  // on the active tape
};

// Image-space losses (rgb, patch, mask, eikonal). Requires an active tape.
// The forward pass used is returned through `fwd` for reuse.
LossBreakdown image_losses(Pipeline& model, const RealObservation& obs, const LossWeights& w,
                           const SamplingConfig& sampling, Rng& rng, Pipeline::ViewForward& fwd);

// Adds the synthetic-branch 3D supervision (surface albedo/shaded colors and
// inside/outside BCE) to an existing breakdown.
void add_3d_losses(Pipeline& model, const SceneBundle& scene, const Pipeline::ViewForward& fwd,
                   const LossWeights& w, const SamplingConfig& sampling, Rng& rng,
                   LossBreakdown& out);

// Binary cross entropy of one (label, probability) pair; probability clamped
// to [1e-6, 1-1e-6].
double bce(double label, double p);

}  // namespace s3f
