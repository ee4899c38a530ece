#pragma once

#include <memory>

#include "s3f/geometry.hpp"
#include "s3f/nn.hpp"

namespace s3f {

struct S3FConfig {
    int n_points = 512;
    int code_dim = 8;        // learnt semantic code width
    int disp_channels = 8;   // trailing feature-image channels driving displacement
    int feat_channels = 24;  // leading channels pooled after displacement
    double d_max = 0.30;     // displacement clamp, meters
    bool use_displacement = true;  // ablation switch
};

// Learnt per-template-point codes; row i is permanently bound to template
// point i.
struct SemanticCodes {
    nn::Value table;  // (N, code_dim)
};
SemanticCodes make_semantic_codes(nn::ParamStore& store, int n_points, int code_dim, Rng& rng);

// Free point displacement d(f_i, e_i, v_i): 2 layers (hidden 64, leaky-ReLU),
// zero-initialized output, applied in camera coordinates and clamped to
// |d| < d_max by a tanh saturation on the norm.
struct DisplacementNet {
    nn::Linear l0, l1;
};
DisplacementNet make_displacement_net(nn::ParamStore& store, int in_dim, Rng& rng);

// The structured 3D features of one (or several, after aggregation) views:
// an ordered point set anchored to the body template, each point carrying an
// image-pooled feature vector.
struct StructuredFeatures {
    nn::Value positions;  // (N,3), world space
    nn::Value features;   // (N, feat_channels); zero rows where out_of_image
    std::shared_ptr<const SurfaceTemplate> tmpl;
    std::vector<double> visibility;     // of the undisplaced posed body points
    std::vector<uint8_t> out_of_image;  // displaced projection left the frame
};

// Differentiable pinhole projection; fills `valid` with the in-front test.
nn::Value project_points(const Camera& cam, const nn::Value& pts, std::vector<uint8_t>& valid);

// Pools the displacement slice (trailing disp_channels) at the projections of
// the undisplaced body points.
nn::Value pool_initial(const nn::Value& featimg, const Camera& cam, const std::vector<Vec3>& v,
                       const S3FConfig& cfg, std::vector<uint8_t>& oob);

// v' = v + clamp(d(f, e, v_cam)); returns (N,3).
nn::Value displace(const std::vector<Vec3>& v, const nn::Value& pooled8,
                   const SemanticCodes& codes, const DisplacementNet& net, const Camera& cam,
                   double d_max);

// Pools the main slice (leading feat_channels) at the displaced positions.
nn::Value pool_final(const nn::Value& featimg, const Camera& cam, const nn::Value& v_prime,
                     const S3FConfig& cfg, std::vector<uint8_t>& oob);

// Full single-view S3F construction (pool, displace, re-pool, visibility).
StructuredFeatures build_structured_features(const nn::Value& featimg, const Camera& cam,
                                             std::shared_ptr<const SurfaceTemplate> tmpl,
                                             const KinematicTree& tree, const Pose& pose,
                                             const ShapeParams& shape, const SemanticCodes& codes,
                                             const DisplacementNet& net, const S3FConfig& cfg);

// Multi-view aggregation: unpose every view to canonical with its own source
// pose, softmax-weight per point by visibility, blend, and re-pose to the
// target pose. All views must share the template.
StructuredFeatures aggregate_views(const std::vector<StructuredFeatures>& views,
                                   const std::vector<const KinematicTree*>& trees,
                                   const std::vector<Pose>& source_poses,
                                   const std::vector<ShapeParams>& source_shapes,
                                   const Pose& target_pose, const ShapeParams& target_shape);

// Re-pose a single reconstruction (unpose to canonical, re-skin to target).
StructuredFeatures repose_features(const StructuredFeatures& sf, const KinematicTree& tree,
                                   const Pose& source_pose, const ShapeParams& source_shape,
                                   const Pose& target_pose, const ShapeParams& target_shape);

// Clothing feature transfer: points whose projection lands inside the mask
// take the donor's feature rows; positions are unchanged.
StructuredFeatures swap_features(const StructuredFeatures& sf, const Camera& cam,
                                 const Image& clothing_mask, const StructuredFeatures& donor);

}  // namespace s3f
