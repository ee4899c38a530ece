#pragma once

#include <string>
#include <vector>

#include "s3f/geometry.hpp"
#include "s3f/image.hpp"

namespace s3f {

struct LightParams {
    Vec3 direction{0, 0, 1};  // unit, pointing from the surface toward the light
    double ambient = 0.3;
    double diffuse = 0.7;
};

// One generated observation: a clothed capsule figure (per-bone radius
// inflation over torso and hips) rendered by exact ray casting, with ground
// truth surface samples and labeled near-surface points.
struct SceneBundle {
    KinematicTree tree;
    Pose pose;             // exact body parameters
    ShapeParams shape;
    Pose fit_pose;         // perturbed parameters emulating a fitting error
    ShapeParams fit_shape;
    std::vector<double> clothing_inflation;  // per-bone radius multiplier (>= 1)
    LightParams light;

    std::vector<Camera> cameras;  // >= 1; index 0 is the training view
    std::vector<Image> rgb;
    std::vector<Image> mask;

    struct SurfaceSample {
        Vec3 pos;
        Vec3 albedo;
        Vec3 shaded;
    };
    struct LabeledPoint {
        Vec3 pos;
        uint8_t inside;
    };
    std::vector<SurfaceSample> gt_surface;
    std::vector<LabeledPoint> gt_labels;

    // Ground-truth clothed geometry (capsules with inflated radii).
    ShapeParams clothed_shape() const;
    PosedBody clothed_body() const;
};

struct SceneGenConfig {
    int image_size = 64;
    double focal = 72.0;
    double camera_distance = 2.6;
    double frontal_prob = 0.4;
    double elevation_range = 20.0 * M_PI / 180.0;
    double pose_amplitude = 0.35;    // radians per joint component
    double max_inflation = 0.40;     // clothing: up to +40% radius
    double fit_rot_noise = 0.15;     // radians, per joint component
    double fit_trans_noise = 0.02;   // meters
    int gt_surface_count = 1024;
    int gt_label_count = 1024;
    double label_noise = 0.01;       // 1 cm
    int views = 1;
};

SceneBundle gen_scene(uint64_t seed, const SceneGenConfig& cfg);

// Procedural per-bone albedo (two-tone checker over the bone-local (u, phi)
// chart); deterministic given the scene seed.
struct AlbedoPattern {
    std::vector<Vec3> color_a, color_b;  // per bone
    int bands_u = 4, bands_phi = 6;

    Vec3 at(int bone, double u, double phi) const;
};
AlbedoPattern make_albedo_pattern(const KinematicTree& tree, Rng& rng);

Vec3 lambert_shade(const Vec3& albedo, const Vec3& normal, const LightParams& light);

// Dataset layout: one directory per scene with rgb.ppm, mask.pgm, camera.txt,
// body.txt, body_fit.txt, clothing.txt, light.txt, gt_surface.bin (f32 xyz,
// albedo, shaded), gt_labels.bin (f32 xyz + u8 label); extra views add
// rgb_v<k>.ppm, mask_v<k>.pgm, camera_v<k>.txt.
void save_scene(const std::string& dir, const SceneBundle& scene);
SceneBundle load_scene(const std::string& dir);

}  // namespace s3f
