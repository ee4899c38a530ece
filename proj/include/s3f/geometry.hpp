#pragma once

#include <string>
#include <vector>

#include "s3f/rng.hpp"
#include "s3f/vec.hpp"

namespace s3f {

// Articulated capsule body: a kinematic joint tree plus capsule bones attached
// to joints. Serves as the analytic stand-in for a statistical body model,
// with an exact signed distance and fixed surface correspondences.

struct Joint {
    int parent = -1;          // index into joints, -1 for the root
    Vec3 offset;              // rest offset from parent, meters
    int length_bone = -1;     // bone whose length scale stretches this offset, -1 = none
    std::string name;
};

struct Bone {
    int joint = 0;            // joint the capsule hangs off
    Vec3 offset;              // rest offset of the capsule base from the joint
    Vec3 axis;                // unit rest direction
    double length = 0;        // rest length, meters
    double radius = 0;        // rest radius, meters
    int base_adjacent = -1;   // bone blended near u=0, -1 = rigid
    int tip_adjacent = -1;    // bone blended near u=1
    std::string name;
};

struct KinematicTree {
    std::vector<Joint> joints;
    std::vector<Bone> bones;

    void validate() const;    // throws on bad parent order, non-positive sizes, ...
};

// The default 17-bone desk-scale skeleton (pelvis, spine x2, neck, head,
// upper/lower arm + hand x2, thigh/shin/foot x2), roughly 1.8 m tall,
// standing on y=0 and facing +z.
KinematicTree default_tree();

struct Pose {
    std::vector<Vec3> rotations;  // axis-angle per joint, radians
    Vec3 root_translation;        // meters

    static Pose rest(const KinematicTree& tree);
    // Rewraps axis-angle magnitudes into [0, pi]; throws on non-finite input.
    void canonicalize();
    bool is_finite() const;
};

struct ShapeParams {
    std::vector<double> length_scale;  // per bone, in [0.5, 2.0]
    std::vector<double> radius_scale;  // per bone, in [0.5, 2.0]

    static ShapeParams unit(const KinematicTree& tree);
    void validate(const KinematicTree& tree) const;
};

// world-from-rest rigid transform per bone ("rest" = zero pose at the same shape).
std::vector<Rigid> forward_kinematics(const KinematicTree& tree, const Pose& pose,
                                      const ShapeParams& shape);

struct Capsule {
    Vec3 a, b;       // segment endpoints, world space
    double radius;
};

double capsule_sdf(const Vec3& x, const Capsule& c);
Vec3 capsule_closest_surface_normal(const Vec3& x, const Capsule& c);

// Cached per-pose evaluation state: bone transforms plus world-space capsules.
struct PosedBody {
    const KinematicTree* tree = nullptr;
    std::vector<Rigid> bone_transforms;
    std::vector<Capsule> capsules;

    double sdf(const Vec3& x) const;
    Vec3 sdf_gradient(const Vec3& x) const;  // analytic, unit norm away from the medial axis
    int nearest_bone(const Vec3& x) const;
    void aabb(Vec3& lo, Vec3& hi) const;     // capsule-union bounds
};

PosedBody pose_body(const KinematicTree& tree, const Pose& pose, const ShapeParams& shape);

// Convenience one-shot form; prefer PosedBody::sdf in loops.
double body_sdf(const Vec3& x, const KinematicTree& tree, const Pose& pose,
                const ShapeParams& shape);

struct SurfacePoint {
    int bone = 0;
    double u = 0;     // axial fraction in [0,1]
    double phi = 0;   // angle around the bone axis
    int bones[2] = {0, -1};
    double weights[2] = {1.0, 0.0};
    Vec3 canonical;   // zero-pose position at the template's shape
};

struct SurfaceTemplate {
    std::vector<SurfacePoint> points;
    ShapeParams shape;  // shape the canonical positions were built at

    size_t size() const { return points.size(); }
};

// Samples N surface points with stable (bone, u, phi) correspondences,
// allocating counts proportional to lateral capsule area. Points swallowed by
// a neighbouring capsule are skipped so every canonical position lies on the
// union surface. Requires N >= 4 * bone count.
SurfaceTemplate sample_surface_template(const KinematicTree& tree, const ShapeParams& shape,
                                        int n_points, uint64_t seed);

// Surface position of a (bone, u, phi) coordinate at zero pose.
Vec3 surface_point_position(const KinematicTree& tree, const ShapeParams& shape, int bone,
                            double u, double phi);

// Skinning weights for a (bone, u) coordinate: rigid in u in [0.1, 0.9],
// linearly blended with the adjacent bone near either end.
void skinning_weights(const KinematicTree& tree, int bone, double u, int out_bones[2],
                      double out_weights[2]);

// Linear blend skinning of template points under per-bone transforms.
std::vector<Vec3> skin_points(const SurfaceTemplate& tmpl, const std::vector<Rigid>& transforms);

Affine blend_transforms(const std::vector<Rigid>& transforms, const int bones[2],
                        const double weights[2]);

// Inverse LBS; throws if a blended transform is near-singular (|det| <= 1e-8).
std::vector<Vec3> unpose_points(const std::vector<Vec3>& points,
                                const std::vector<const SurfacePoint*>& weights,
                                const std::vector<Rigid>& transforms);
Vec3 unpose_point(const Vec3& p, const SurfacePoint& w, const std::vector<Rigid>& transforms);

struct Camera {
    double focal = 64;        // pixels (fx = fy)
    double cx = 32, cy = 32;  // principal point, pixels
    int width = 64, height = 64;
    Mat3 R;                   // world-to-camera rotation
    Vec3 t;                   // world-to-camera translation; x_cam = R x + t

    void validate() const;    // focal > 0, R orthonormal within 1e-6
    Vec3 to_camera(const Vec3& x) const { return R * x + t; }
    Vec3 origin() const { return -(R.transposed() * t); }
    Vec3 ray_direction(double u, double v) const;  // world space, unit length
};

// Camera placed on a sphere around `target`, looking at it. Azimuth 0 means
// looking along -z toward the front of the default body.
Camera look_at_camera(const Vec3& target, double azimuth, double elevation, double distance,
                      double focal, int width, int height);

struct Projection {
    double u = 0, v = 0;
    bool ok = false;  // false if behind the camera (z <= 1e-6)
};

Projection project(const Camera& cam, const Vec3& x);

inline constexpr double kVisibilityEps = 5e-3;  // meters

// Sphere-traces from the camera toward each point through the body SDF;
// 1.0 iff the first surface hit lies within kVisibilityEps of the point.
std::vector<double> visibility(const std::vector<Vec3>& points, const PosedBody& body,
                               const Camera& cam);

struct RayHit {
    bool hit = false;
    double t = 0;
    Vec3 position;
};

// Sphere tracing against an arbitrary SDF-like functor.
template <class F>
RayHit sphere_trace(const Vec3& origin, const Vec3& dir, const F& sdf, double t_max,
                    double hit_eps = 1e-5, int max_steps = 256) {
    RayHit out;
    double t = 0;
    for (int i = 0; i < max_steps && t <= t_max; ++i) {
        Vec3 p = origin + dir * t;
        double d = sdf(p);
        if (d < hit_eps) {
            out.hit = true;
            out.t = t;
            out.position = p;
            return out;
        }
        t += d;
    }
    out.t = t;
    return out;
}

// Text serialization of the body record (bone table, pose, shape). The format
// is documented in the README.
std::string body_to_text(const KinematicTree& tree, const Pose& pose, const ShapeParams& shape);
void body_from_text(const std::string& text, KinematicTree& tree, Pose& pose, ShapeParams& shape);
void save_body(const std::string& path, const KinematicTree& tree, const Pose& pose,
               const ShapeParams& shape);
void load_body(const std::string& path, KinematicTree& tree, Pose& pose, ShapeParams& shape);

std::string camera_to_text(const Camera& cam);
Camera camera_from_text(const std::string& text);
void save_camera(const std::string& path, const Camera& cam);
Camera load_camera(const std::string& path);

}  // namespace s3f
