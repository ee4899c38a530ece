#include "s3f/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace s3f {

void KinematicTree::validate() const {
    if (joints.empty() || bones.empty()) throw std::invalid_argument("empty kinematic tree");
    int roots = 0;
    for (size_t j = 0; j < joints.size(); ++j) {
        const Joint& jt = joints[j];
        if (jt.parent < 0) {
            ++roots;
        } else if (jt.parent >= (int)j) {
            throw std::invalid_argument("joint parents must precede children");
        }
        if (!finite(jt.offset)) throw std::invalid_argument("non-finite joint offset");
        if (jt.length_bone >= (int)bones.size())
            throw std::invalid_argument("joint length_bone out of range");
    }
    if (roots != 1) throw std::invalid_argument("tree must have exactly one root");
    for (const Bone& b : bones) {
        if (b.joint < 0 || b.joint >= (int)joints.size())
            throw std::invalid_argument("bone joint out of range");
        if (!(b.length > 0) || !(b.radius > 0))
            throw std::invalid_argument("bone length and radius must be positive");
        if (std::abs(norm(b.axis) - 1.0) > 1e-9)
            throw std::invalid_argument("bone axis must be unit length");
    }
}

KinematicTree default_tree() {
    KinematicTree t;
    auto joint = [&](int parent, Vec3 off, int length_bone, const char* name) {
        t.joints.push_back({parent, off, length_bone, name});
        return (int)t.joints.size() - 1;
    };
    auto bone = [&](int joint, Vec3 off, Vec3 axis, double len, double rad, const char* name) {
        t.bones.push_back({joint, off, normalized(axis), len, rad, -1, -1, name});
        return (int)t.bones.size() - 1;
    };

    int pelvis = joint(-1, {0, 1.00, 0}, -1, "pelvis");
    int spine_mid = joint(pelvis, {0, 0.12, 0}, -1, "spine_mid");       // stretched by spine_lo
    int chest = joint(spine_mid, {0, 0.14, 0}, -1, "chest");            // stretched by spine_up
    int neck = joint(chest, {0, 0.14, 0}, -1, "neck");
    int l_shoulder = joint(chest, {0.16, 0.10, 0}, -1, "l_shoulder");
    int l_elbow = joint(l_shoulder, {0.28, 0, 0}, -1, "l_elbow");
    int l_wrist = joint(l_elbow, {0.25, 0, 0}, -1, "l_wrist");
    int r_shoulder = joint(chest, {-0.16, 0.10, 0}, -1, "r_shoulder");
    int r_elbow = joint(r_shoulder, {-0.28, 0, 0}, -1, "r_elbow");
    int r_wrist = joint(r_elbow, {-0.25, 0, 0}, -1, "r_wrist");
    int l_hip = joint(pelvis, {0.09, -0.06, 0}, -1, "l_hip");
    int l_knee = joint(l_hip, {0, -0.42, 0}, -1, "l_knee");
    int l_ankle = joint(l_knee, {0, -0.40, 0}, -1, "l_ankle");
    int r_hip = joint(pelvis, {-0.09, -0.06, 0}, -1, "r_hip");
    int r_knee = joint(r_hip, {0, -0.42, 0}, -1, "r_knee");
    int r_ankle = joint(r_knee, {0, -0.40, 0}, -1, "r_ankle");

    int b_pelvis = bone(pelvis, {-0.10, -0.02, 0}, {1, 0, 0}, 0.20, 0.10, "pelvis");
    int b_spine_lo = bone(pelvis, {0, 0, 0}, {0, 1, 0}, 0.12, 0.11, "spine_lo");
    int b_spine_up = bone(spine_mid, {0, 0, 0}, {0, 1, 0}, 0.14, 0.12, "spine_up");
    int b_neck = bone(neck, {0, 0, 0}, {0, 1, 0}, 0.12, 0.04, "neck");
    int b_head = bone(neck, {0, 0.12, 0}, {0, 1, 0}, 0.14, 0.075, "head");
    int b_l_uarm = bone(l_shoulder, {0, 0, 0}, {1, 0, 0}, 0.28, 0.045, "l_uarm");
    int b_l_farm = bone(l_elbow, {0, 0, 0}, {1, 0, 0}, 0.25, 0.035, "l_farm");
    int b_l_hand = bone(l_wrist, {0, 0, 0}, {1, 0, 0}, 0.15, 0.030, "l_hand");
    int b_r_uarm = bone(r_shoulder, {0, 0, 0}, {-1, 0, 0}, 0.28, 0.045, "r_uarm");
    int b_r_farm = bone(r_elbow, {0, 0, 0}, {-1, 0, 0}, 0.25, 0.035, "r_farm");
    int b_r_hand = bone(r_wrist, {0, 0, 0}, {-1, 0, 0}, 0.15, 0.030, "r_hand");
    int b_l_thigh = bone(l_hip, {0, 0, 0}, {0, -1, 0}, 0.42, 0.070, "l_thigh");
    int b_l_shin = bone(l_knee, {0, 0, 0}, {0, -1, 0}, 0.40, 0.050, "l_shin");
    int b_l_foot = bone(l_ankle, {0, -0.02, 0}, {0, 0, 1}, 0.18, 0.035, "l_foot");
    int b_r_thigh = bone(r_hip, {0, 0, 0}, {0, -1, 0}, 0.42, 0.070, "r_thigh");
    int b_r_shin = bone(r_knee, {0, 0, 0}, {0, -1, 0}, 0.40, 0.050, "r_shin");
    int b_r_foot = bone(r_ankle, {0, -0.02, 0}, {0, 0, 1}, 0.18, 0.035, "r_foot");

    auto& J = t.joints;
    J[spine_mid].length_bone = b_spine_lo;
    J[chest].length_bone = b_spine_up;
    J[neck].length_bone = b_spine_up;
    J[l_elbow].length_bone = b_l_uarm;
    J[l_wrist].length_bone = b_l_farm;
    J[r_elbow].length_bone = b_r_uarm;
    J[r_wrist].length_bone = b_r_farm;
    J[l_knee].length_bone = b_l_thigh;
    J[l_ankle].length_bone = b_l_shin;
    J[r_knee].length_bone = b_r_thigh;
    J[r_ankle].length_bone = b_r_shin;

    auto& B = t.bones;
    auto adj = [&](int b, int base, int tip) {
        B[b].base_adjacent = base;
        B[b].tip_adjacent = tip;
    };
    adj(b_spine_lo, b_pelvis, b_spine_up);
    adj(b_spine_up, b_spine_lo, -1);
    adj(b_neck, b_spine_up, b_head);
    adj(b_head, b_neck, -1);
    adj(b_l_uarm, b_spine_up, b_l_farm);
    adj(b_l_farm, b_l_uarm, b_l_hand);
    adj(b_l_hand, b_l_farm, -1);
    adj(b_r_uarm, b_spine_up, b_r_farm);
    adj(b_r_farm, b_r_uarm, b_r_hand);
    adj(b_r_hand, b_r_farm, -1);
    adj(b_l_thigh, b_pelvis, b_l_shin);
    adj(b_l_shin, b_l_thigh, b_l_foot);
    adj(b_l_foot, b_l_shin, -1);
    adj(b_r_thigh, b_pelvis, b_r_shin);
    adj(b_r_shin, b_r_thigh, b_r_foot);
    adj(b_r_foot, b_r_shin, -1);

    t.validate();
    return t;
}

Pose Pose::rest(const KinematicTree& tree) {
    Pose p;
    p.rotations.assign(tree.joints.size(), Vec3{0, 0, 0});
    return p;
}

bool Pose::is_finite() const {
    if (!finite(root_translation)) return false;
    for (const Vec3& r : rotations)
        if (!finite(r)) return false;
    return true;
}

void Pose::canonicalize() {
    if (!is_finite()) throw std::invalid_argument("non-finite pose");
    for (Vec3& r : rotations) {
        double a = norm(r);
        if (a > M_PI) {
            double wrapped = std::fmod(a + M_PI, 2.0 * M_PI) - M_PI;
            r = r * (wrapped / a);
        }
    }
}

ShapeParams ShapeParams::unit(const KinematicTree& tree) {
    ShapeParams s;
    s.length_scale.assign(tree.bones.size(), 1.0);
    s.radius_scale.assign(tree.bones.size(), 1.0);
    return s;
}

void ShapeParams::validate(const KinematicTree& tree) const {
    if (length_scale.size() != tree.bones.size() || radius_scale.size() != tree.bones.size())
        throw std::invalid_argument("shape scale count mismatch");
    for (double s : length_scale)
        if (!(s >= 0.5 && s <= 2.0)) throw std::invalid_argument("length scale outside [0.5, 2]");
    for (double s : radius_scale)
        if (!(s >= 0.5 && s <= 2.0)) throw std::invalid_argument("radius scale outside [0.5, 2]");
}

namespace {

// Joint world transforms for one configuration.
std::vector<Rigid> joint_transforms(const KinematicTree& tree, const Pose& pose,
                                    const ShapeParams& shape) {
    std::vector<Rigid> world(tree.joints.size());
    for (size_t j = 0; j < tree.joints.size(); ++j) {
        const Joint& jt = tree.joints[j];
        Vec3 off = jt.offset;
        if (jt.length_bone >= 0) off = off * shape.length_scale[jt.length_bone];
        Rigid local{rotation_from_axis_angle(pose.rotations[j]), off};
        if (jt.parent < 0) {
            local.t += pose.root_translation;
            world[j] = local;
        } else {
            world[j] = world[jt.parent].compose(local);
        }
    }
    return world;
}

}  // namespace

std::vector<Rigid> forward_kinematics(const KinematicTree& tree, const Pose& pose,
                                      const ShapeParams& shape) {
    if (pose.rotations.size() != tree.joints.size())
        throw std::invalid_argument("pose joint count mismatch");
    if (!pose.is_finite()) throw std::invalid_argument("non-finite pose");
    shape.validate(tree);

    std::vector<Rigid> posed = joint_transforms(tree, pose, shape);
    std::vector<Rigid> rest = joint_transforms(tree, Pose::rest(tree), shape);

    std::vector<Rigid> out(tree.bones.size());
    for (size_t b = 0; b < tree.bones.size(); ++b) {
        const Bone& bone = tree.bones[b];
        out[b] = posed[bone.joint].compose(rest[bone.joint].inverse());
    }
    return out;
}

double capsule_sdf(const Vec3& x, const Capsule& c) {
    Vec3 ab = c.b - c.a;
    double denom = norm2(ab);
    double t = denom > 0 ? std::clamp(dot(x - c.a, ab) / denom, 0.0, 1.0) : 0.0;
    return norm(x - (c.a + ab * t)) - c.radius;
}

Vec3 capsule_closest_surface_normal(const Vec3& x, const Capsule& c) {
    Vec3 ab = c.b - c.a;
    double denom = norm2(ab);
    double t = denom > 0 ? std::clamp(dot(x - c.a, ab) / denom, 0.0, 1.0) : 0.0;
    Vec3 d = x - (c.a + ab * t);
    double n = norm(d);
    if (n < 1e-12) {
        // On the axis: pick any perpendicular.
        Vec3 perp = std::abs(ab.y) < 0.9 * norm(ab) ? cross(ab, Vec3{0, 1, 0}) : cross(ab, Vec3{1, 0, 0});
        return normalized(perp);
    }
    return d / n;
}

PosedBody pose_body(const KinematicTree& tree, const Pose& pose, const ShapeParams& shape) {
    PosedBody pb;
    pb.tree = &tree;
    pb.bone_transforms = forward_kinematics(tree, pose, shape);
    std::vector<Rigid> joints = joint_transforms(tree, pose, shape);
    pb.capsules.resize(tree.bones.size());
    for (size_t b = 0; b < tree.bones.size(); ++b) {
        const Bone& bone = tree.bones[b];
        const Rigid& J = joints[bone.joint];
        Vec3 a = J.apply(bone.offset);
        Vec3 dir = J.R * bone.axis;
        pb.capsules[b] = {a, a + dir * (bone.length * shape.length_scale[b]),
                          bone.radius * shape.radius_scale[b]};
    }
    return pb;
}

double PosedBody::sdf(const Vec3& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (const Capsule& c : capsules) d = std::min(d, capsule_sdf(x, c));
    return d;
}

int PosedBody::nearest_bone(const Vec3& x) const {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (size_t b = 0; b < capsules.size(); ++b) {
        double d = capsule_sdf(x, capsules[b]);
        if (d < best) {
            best = d;
            arg = (int)b;
        }
    }
    return arg;
}

Vec3 PosedBody::sdf_gradient(const Vec3& x) const {
    return capsule_closest_surface_normal(x, capsules[nearest_bone(x)]);
}

void PosedBody::aabb(Vec3& lo, Vec3& hi) const {
    lo = {1e30, 1e30, 1e30};
    hi = {-1e30, -1e30, -1e30};
    for (const Capsule& c : capsules) {
        for (int i = 0; i < 3; ++i) {
            lo[i] = std::min({lo[i], c.a[i] - c.radius, c.b[i] - c.radius});
            hi[i] = std::max({hi[i], c.a[i] + c.radius, c.b[i] + c.radius});
        }
    }
}

double body_sdf(const Vec3& x, const KinematicTree& tree, const Pose& pose,
                const ShapeParams& shape) {
    if (!finite(x)) throw std::invalid_argument("non-finite query point");
    return pose_body(tree, pose, shape).sdf(x);
}

void skinning_weights(const KinematicTree& tree, int bone, double u, int out_bones[2],
                      double out_weights[2]) {
    const Bone& b = tree.bones[bone];
    out_bones[0] = bone;
    out_bones[1] = -1;
    out_weights[0] = 1.0;
    out_weights[1] = 0.0;
    if (u < 0.1 && b.base_adjacent >= 0) {
        double w = 0.5 * (1.0 - u / 0.1);
        out_bones[1] = b.base_adjacent;
        out_weights[0] = 1.0 - w;
        out_weights[1] = w;
    } else if (u > 0.9 && b.tip_adjacent >= 0) {
        double w = 0.5 * ((u - 0.9) / 0.1);
        out_bones[1] = b.tip_adjacent;
        out_weights[0] = 1.0 - w;
        out_weights[1] = w;
    }
}

Vec3 surface_point_position(const KinematicTree& tree, const ShapeParams& shape, int bone,
                            double u, double phi) {
    const Bone& b = tree.bones[bone];
    // Joint rest positions at this shape.
    Pose rest = Pose::rest(tree);
    std::vector<Rigid> joints = joint_transforms(tree, rest, shape);
    Vec3 base = joints[b.joint].apply(b.offset);
    Vec3 axis = joints[b.joint].R * b.axis;
    Vec3 ref = std::abs(axis.y) < 0.99 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
    Vec3 n1 = normalized(cross(axis, ref));
    Vec3 n2 = cross(axis, n1);
    double r = b.radius * shape.radius_scale[bone];
    return base + axis * (u * b.length * shape.length_scale[bone]) +
           (n1 * std::cos(phi) + n2 * std::sin(phi)) * r;
}

SurfaceTemplate sample_surface_template(const KinematicTree& tree, const ShapeParams& shape,
                                        int n_points, uint64_t seed) {
    tree.validate();
    shape.validate(tree);
    const int nb = (int)tree.bones.size();
    if (n_points < 4 * nb)
        throw std::invalid_argument("template needs at least 4 points per bone");

    // Allocation proportional to lateral area 2*pi*r*l, largest remainder.
    std::vector<double> area(nb);
    double total = 0;
    for (int b = 0; b < nb; ++b) {
        area[b] = 2.0 * M_PI * tree.bones[b].radius * shape.radius_scale[b] *
                  tree.bones[b].length * shape.length_scale[b];
        total += area[b];
    }
    std::vector<int> count(nb, 1);
    std::vector<std::pair<double, int>> rem(nb);
    int assigned = nb;
    for (int b = 0; b < nb; ++b) {
        double exact = area[b] / total * n_points;
        int whole = std::max(1, (int)std::floor(exact));
        count[b] = whole;
        assigned += whole - 1;
        rem[b] = {exact - whole, b};
    }
    std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (int i = 0; assigned < n_points; ++i, ++assigned) count[rem[i % nb].second]++;
    while (assigned > n_points) {
        int arg = (int)(std::max_element(count.begin(), count.end()) - count.begin());
        count[arg]--;
        assigned--;
    }

    // Precompute the rest body once for the rejection test.
    PosedBody rest = pose_body(tree, Pose::rest(tree), shape);
    const double golden = 0.6180339887498949;

    SurfaceTemplate tmpl;
    tmpl.shape = shape;
    tmpl.points.reserve(n_points);
    Rng rng(seed);
    for (int b = 0; b < nb; ++b) {
        Rng brng = rng.fork(b);
        double phase = brng.uniform();
        int accepted = 0;
        // Golden-ratio lattice over (u, phi); walk the stream until enough
        // points survive the union-surface rejection test.
        for (int i = 0; accepted < count[b] && i < count[b] * 64 + 4096; ++i) {
            double u = (i + 0.5) / count[b];
            u -= std::floor(u);
            double phi = 2.0 * M_PI * std::fmod(phase + i * golden, 1.0);
            Vec3 p = surface_point_position(tree, shape, b, u, phi);
            // On its own capsule the union SDF is ~0 unless another capsule
            // swallows the point.
            bool inside_other = false;
            for (int o = 0; o < nb && !inside_other; ++o)
                if (o != b && capsule_sdf(p, rest.capsules[o]) < 1e-7) inside_other = true;
            if (inside_other) continue;
            SurfacePoint sp;
            sp.bone = b;
            sp.u = u;
            sp.phi = phi;
            sp.canonical = p;
            skinning_weights(tree, b, u, sp.bones, sp.weights);
            tmpl.points.push_back(sp);
            ++accepted;
        }
        if (accepted < count[b])
            throw std::runtime_error("bone " + tree.bones[b].name +
                                     " is almost fully swallowed; cannot sample surface");
    }
    return tmpl;
}

std::vector<Vec3> skin_points(const SurfaceTemplate& tmpl, const std::vector<Rigid>& transforms) {
    std::vector<Vec3> out(tmpl.points.size());
    for (size_t i = 0; i < tmpl.points.size(); ++i) {
        const SurfacePoint& sp = tmpl.points[i];
        Vec3 v = transforms[sp.bones[0]].apply(sp.canonical) * sp.weights[0];
        if (sp.bones[1] >= 0) v += transforms[sp.bones[1]].apply(sp.canonical) * sp.weights[1];
        out[i] = v;
    }
    return out;
}

Affine blend_transforms(const std::vector<Rigid>& transforms, const int bones[2],
                        const double weights[2]) {
    const Rigid& t0 = transforms[bones[0]];
    Affine m{t0.R.scaled(weights[0]), t0.t * weights[0]};
    if (bones[1] >= 0) {
        const Rigid& t1 = transforms[bones[1]];
        m.A = m.A + t1.R.scaled(weights[1]);
        m.t += t1.t * weights[1];
    }
    return m;
}

Vec3 unpose_point(const Vec3& p, const SurfacePoint& w, const std::vector<Rigid>& transforms) {
    Affine m = blend_transforms(transforms, w.bones, w.weights);
    if (std::abs(m.A.det()) <= 1e-8)
        throw std::runtime_error("degenerate pose: blended skinning transform is singular");
    return m.inverse().apply(p);
}

std::vector<Vec3> unpose_points(const std::vector<Vec3>& points,
                                const std::vector<const SurfacePoint*>& weights,
                                const std::vector<Rigid>& transforms) {
    if (points.size() != weights.size()) throw std::invalid_argument("unpose size mismatch");
    std::vector<Vec3> out(points.size());
    for (size_t i = 0; i < points.size(); ++i)
        out[i] = unpose_point(points[i], *weights[i], transforms);
    return out;
}

void Camera::validate() const {
    if (!(focal > 0)) throw std::invalid_argument("camera focal must be positive");
    Mat3 rrt = R * R.transposed();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (std::abs(rrt(i, j) - (i == j ? 1.0 : 0.0)) > 1e-6)
                throw std::invalid_argument("camera rotation is not orthonormal");
}

Vec3 Camera::ray_direction(double u, double v) const {
    Vec3 d_cam{(u - cx) / focal, (v - cy) / focal, 1.0};
    return normalized(R.transposed() * d_cam);
}

Camera look_at_camera(const Vec3& target, double azimuth, double elevation, double distance,
                      double focal, int width, int height) {
    // Camera position on the viewing sphere; azimuth 0 is in front (+z side).
    Vec3 dir{std::sin(azimuth) * std::cos(elevation), std::sin(elevation),
             std::cos(azimuth) * std::cos(elevation)};
    Vec3 eye = target + dir * distance;
    Vec3 fwd = normalized(target - eye);       // camera +z
    Vec3 world_up{0, 1, 0};
    Vec3 right = normalized(cross(world_up, fwd));
    if (norm(right) < 1e-9) right = {1, 0, 0};
    Vec3 up = cross(fwd, right);
    // Image v axis points down.
    Camera cam;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    for (int c = 0; c < 3; ++c) {
        cam.R(0, c) = right[c];
        cam.R(1, c) = -up[c];
        cam.R(2, c) = fwd[c];
    }
    cam.t = -(cam.R * eye);
    return cam;
}

Projection project(const Camera& cam, const Vec3& x) {
    Vec3 xc = cam.to_camera(x);
    Projection p;
    if (xc.z <= 1e-6) return p;
    p.u = cam.focal * xc.x / xc.z + cam.cx;
    p.v = cam.focal * xc.y / xc.z + cam.cy;
    p.ok = true;
    return p;
}

std::vector<double> visibility(const std::vector<Vec3>& points, const PosedBody& body,
                               const Camera& cam) {
    Vec3 origin = cam.origin();
    std::vector<double> out(points.size(), 0.0);
    auto sdf = [&](const Vec3& p) { return body.sdf(p); };
    for (size_t i = 0; i < points.size(); ++i) {
        if (!finite(points[i])) throw std::invalid_argument("non-finite visibility query");
        Vec3 delta = points[i] - origin;
        double dist = norm(delta);
        if (dist < 1e-9) {
            out[i] = 1.0;
            continue;
        }
        Vec3 dir = delta / dist;
        RayHit hit = sphere_trace(origin, dir, sdf, dist + kVisibilityEps, 1e-4, 512);
        if (hit.hit) {
            out[i] = (dist - hit.t) < kVisibilityEps ? 1.0 : 0.0;
        } else {
            // Ran past the point (or out of steps close to it) without a hit.
            out[i] = (hit.t >= dist - kVisibilityEps) ? 1.0 : 0.0;
        }
    }
    return out;
}

namespace {

void expect(std::istream& in, const std::string& tag) {
    std::string tok;
    in >> tok;
    if (tok != tag) throw std::runtime_error("body record: expected '" + tag + "', got '" + tok + "'");
}

}  // namespace

std::string body_to_text(const KinematicTree& tree, const Pose& pose, const ShapeParams& shape) {
    std::ostringstream os;
    os.precision(17);
    os << "s3f_body 1\n";
    os << "joints " << tree.joints.size() << "\n";
    for (const Joint& j : tree.joints)
        os << j.parent << " " << j.offset.x << " " << j.offset.y << " " << j.offset.z << " "
           << j.length_bone << " " << j.name << "\n";
    os << "bones " << tree.bones.size() << "\n";
    for (const Bone& b : tree.bones)
        os << b.joint << " " << b.offset.x << " " << b.offset.y << " " << b.offset.z << " "
           << b.axis.x << " " << b.axis.y << " " << b.axis.z << " " << b.length << " " << b.radius
           << " " << b.base_adjacent << " " << b.tip_adjacent << " " << b.name << "\n";
    os << "pose " << pose.rotations.size() << "\n";
    os << pose.root_translation.x << " " << pose.root_translation.y << " "
       << pose.root_translation.z << "\n";
    for (const Vec3& r : pose.rotations) os << r.x << " " << r.y << " " << r.z << "\n";
    os << "shape " << shape.length_scale.size() << "\n";
    for (size_t b = 0; b < shape.length_scale.size(); ++b)
        os << shape.length_scale[b] << " " << shape.radius_scale[b] << "\n";
    return os.str();
}

void body_from_text(const std::string& text, KinematicTree& tree, Pose& pose,
                    ShapeParams& shape) {
    std::istringstream in(text);
    expect(in, "s3f_body");
    int version;
    in >> version;
    if (version != 1) throw std::runtime_error("unsupported body record version");
    size_t n;
    expect(in, "joints");
    in >> n;
    tree.joints.resize(n);
    for (Joint& j : tree.joints)
        in >> j.parent >> j.offset.x >> j.offset.y >> j.offset.z >> j.length_bone >> j.name;
    expect(in, "bones");
    in >> n;
    tree.bones.resize(n);
    for (Bone& b : tree.bones)
        in >> b.joint >> b.offset.x >> b.offset.y >> b.offset.z >> b.axis.x >> b.axis.y >>
            b.axis.z >> b.length >> b.radius >> b.base_adjacent >> b.tip_adjacent >> b.name;
    expect(in, "pose");
    in >> n;
    pose.rotations.resize(n);
    in >> pose.root_translation.x >> pose.root_translation.y >> pose.root_translation.z;
    for (Vec3& r : pose.rotations) in >> r.x >> r.y >> r.z;
    expect(in, "shape");
    in >> n;
    shape.length_scale.resize(n);
    shape.radius_scale.resize(n);
    for (size_t b = 0; b < n; ++b) in >> shape.length_scale[b] >> shape.radius_scale[b];
    if (!in) throw std::runtime_error("truncated body record");
    tree.validate();
}

void save_body(const std::string& path, const KinematicTree& tree, const Pose& pose,
               const ShapeParams& shape) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << body_to_text(tree, pose, shape);
}

void load_body(const std::string& path, KinematicTree& tree, Pose& pose, ShapeParams& shape) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    body_from_text(ss.str(), tree, pose, shape);
}

std::string camera_to_text(const Camera& cam) {
    std::ostringstream os;
    os.precision(17);
    os << "s3f_camera 1\n";
    os << cam.focal << " " << cam.cx << " " << cam.cy << " " << cam.width << " " << cam.height
       << "\n";
    for (int i = 0; i < 9; ++i) os << cam.R.m[i] << (i == 8 ? "\n" : " ");
    os << cam.t.x << " " << cam.t.y << " " << cam.t.z << "\n";
    return os.str();
}

Camera camera_from_text(const std::string& text) {
    std::istringstream in(text);
    expect(in, "s3f_camera");
    int version;
    in >> version;
    if (version != 1) throw std::runtime_error("unsupported camera record version");
    Camera cam;
    in >> cam.focal >> cam.cx >> cam.cy >> cam.width >> cam.height;
    for (int i = 0; i < 9; ++i) in >> cam.R.m[i];
    in >> cam.t.x >> cam.t.y >> cam.t.z;
    if (!in) throw std::runtime_error("truncated camera record");
    cam.validate();
    return cam;
}

void save_camera(const std::string& path, const Camera& cam) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << camera_to_text(cam);
}

Camera load_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return camera_from_text(ss.str());
}

}  // namespace s3f
