#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "s3f/geometry.hpp"
#include "s3f/rng.hpp"

using namespace s3f;

namespace {

// Two-bone chain along +y: joint1 sits at the tip of bone0.
KinematicTree chain_tree() {
    KinematicTree t;
    t.joints.push_back({-1, {0, 0, 0}, -1, "root"});
    t.joints.push_back({0, {0, 1, 0}, 0, "mid"});
    t.bones.push_back({0, {0, 0, 0}, {0, 1, 0}, 1.0, 0.1, -1, 1, "lower"});
    t.bones.push_back({1, {0, 0, 0}, {0, 1, 0}, 1.0, 0.1, 0, -1, "upper"});
    return t;
}

KinematicTree single_capsule_tree(double len = 1.0, double rad = 0.25) {
    KinematicTree t;
    t.joints.push_back({-1, {0, 0, 0}, -1, "root"});
    t.bones.push_back({0, {0, 0, 0}, {0, 1, 0}, len, rad, -1, -1, "only"});
    return t;
}

Pose random_pose(const KinematicTree& tree, Rng& rng, double amp = 0.4) {
    Pose p = Pose::rest(tree);
    for (Vec3& r : p.rotations) r = {rng.uniform(-amp, amp), rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
    p.root_translation = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    return p;
}

}  // namespace

TEST_CASE("forward kinematics: identity pose gives identity transforms") {
    KinematicTree tree = default_tree();
    auto tf = forward_kinematics(tree, Pose::rest(tree), ShapeParams::unit(tree));
    for (const Rigid& r : tf) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(r.R(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
        CHECK(norm(r.t) == doctest::Approx(0.0).epsilon(1e-12));
    }
    // Any valid shape is its own rest configuration.
    ShapeParams s = ShapeParams::unit(tree);
    s.length_scale[2] = 1.5;
    s.radius_scale[5] = 0.7;
    auto tf2 = forward_kinematics(tree, Pose::rest(tree), s);
    CHECK(norm(tf2[2].t) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("forward kinematics: 90 degree rotation on a 2-bone chain") {
    KinematicTree tree = chain_tree();
    Pose p = Pose::rest(tree);
    p.rotations[1] = {0, 0, M_PI / 2};  // rotate the upper bone about z
    auto tf = forward_kinematics(tree, p, ShapeParams::unit(tree));
    // Rest tip of the upper bone is (0,2,0); hand-composed transform maps it
    // to joint1 + Rz(90) * (0,1,0) = (-1,1,0).
    Vec3 tip = tf[1].apply({0, 2, 0});
    CHECK(tip.x == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(tip.y == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tip.z == doctest::Approx(0.0).epsilon(1e-12));
    // Transforms stay rigid.
    Mat3 rrt = tf[1].R * tf[1].R.transposed();
    for (int i = 0; i < 3; ++i) CHECK(rrt(i, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward kinematics rejects non-finite poses") {
    KinematicTree tree = chain_tree();
    Pose p = Pose::rest(tree);
    p.rotations[0].x = std::nan("");
    CHECK_THROWS(forward_kinematics(tree, p, ShapeParams::unit(tree)));
}

TEST_CASE("length scale doubles the bone tip offset in the rest frame") {
    KinematicTree tree = chain_tree();
    ShapeParams s = ShapeParams::unit(tree);
    s.length_scale[0] = 2.0;
    PosedBody body = pose_body(tree, Pose::rest(tree), s);
    Vec3 tip_offset = body.capsules[0].b - body.capsules[0].a;
    CHECK(norm(tip_offset) == doctest::Approx(2.0));
    // The child joint rides along with the stretched bone.
    CHECK(body.capsules[1].a.y == doctest::Approx(2.0));
}

TEST_CASE("skinning: identity transforms reproduce canonical positions") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);
    SurfaceTemplate tmpl = sample_surface_template(tree, shape, 128, 7);
    auto tf = forward_kinematics(tree, Pose::rest(tree), shape);
    auto posed = skin_points(tmpl, tf);
    for (size_t i = 0; i < posed.size(); ++i)
        CHECK(norm(posed[i] - tmpl.points[i].canonical) < 1e-12);
}

TEST_CASE("skinning: single-bone weight applies exactly that transform") {
    KinematicTree tree = chain_tree();
    Pose p = Pose::rest(tree);
    p.rotations[0] = {0.3, -0.2, 0.5};
    auto tf = forward_kinematics(tree, p, ShapeParams::unit(tree));
    SurfaceTemplate tmpl;
    tmpl.shape = ShapeParams::unit(tree);
    SurfacePoint sp;
    sp.bone = 0;
    sp.bones[0] = 0;
    sp.bones[1] = -1;
    sp.weights[0] = 1.0;
    sp.canonical = {0.07, 0.4, 0.05};
    tmpl.points.push_back(sp);
    auto posed = skin_points(tmpl, tf);
    CHECK(norm(posed[0] - tf[0].apply(sp.canonical)) < 1e-15);
}

TEST_CASE("skinning: 50/50 blend averages the two rigidly mapped positions") {
    KinematicTree tree = chain_tree();
    Pose p = Pose::rest(tree);
    p.rotations[1] = {0.4, 0.1, -0.3};
    auto tf = forward_kinematics(tree, p, ShapeParams::unit(tree));
    SurfacePoint sp;
    sp.bones[0] = 0;
    sp.bones[1] = 1;
    sp.weights[0] = 0.5;
    sp.weights[1] = 0.5;
    sp.canonical = {0.05, 0.95, 0.0};
    SurfaceTemplate tmpl;
    tmpl.points.push_back(sp);
    auto posed = skin_points(tmpl, tf);
    Vec3 expect = (tf[0].apply(sp.canonical) + tf[1].apply(sp.canonical)) * 0.5;
    CHECK(norm(posed[0] - expect) < 1e-15);
}

TEST_CASE("unpose inverts skinning on template points") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);
    SurfaceTemplate tmpl = sample_surface_template(tree, shape, 256, 3);

    SUBCASE("identity transforms give the identity map") {
        auto tf = forward_kinematics(tree, Pose::rest(tree), shape);
        Vec3 p{0.2, 1.1, 0.05};
        CHECK(norm(unpose_point(p, tmpl.points[0], tf) - p) < 1e-12);
    }

    SUBCASE("round trip under random poses, 1000 points") {
        Rng rng(99);
        for (int trial = 0; trial < 4; ++trial) {
            Pose pose = random_pose(tree, rng);
            auto tf = forward_kinematics(tree, pose, shape);
            auto posed = skin_points(tmpl, tf);
            double worst = 0;
            for (size_t i = 0; i < tmpl.points.size(); ++i) {
                Vec3 back = unpose_point(posed[i], tmpl.points[i], tf);
                worst = std::max(worst, norm(back - tmpl.points[i].canonical));
            }
            CHECK(worst < 1e-5);
        }
    }
}

TEST_CASE("body sdf of an isolated capsule") {
    KinematicTree tree = single_capsule_tree(1.0, 0.25);
    Pose rest = Pose::rest(tree);
    ShapeParams shape = ShapeParams::unit(tree);
    // Axis midpoint is exactly -radius deep.
    CHECK(body_sdf({0, 0.5, 0}, tree, rest, shape) == doctest::Approx(-0.25).epsilon(1e-12));
    // A point at radius distance from the axis is on the surface.
    CHECK(body_sdf({0.25, 0.5, 0}, tree, rest, shape) == doctest::Approx(0.0).epsilon(1e-12));
    // End cap.
    CHECK(body_sdf({0, 1.0 + 0.25, 0}, tree, rest, shape) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("body sdf equals brute-force union of capsule distances") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);
    Rng rng(11);
    Pose pose = random_pose(tree, rng);
    PosedBody body = pose_body(tree, pose, shape);
    for (int i = 0; i < 500; ++i) {
        Vec3 x{rng.uniform(-2, 2), rng.uniform(-1, 3), rng.uniform(-2, 2)};
        // Independent re-evaluation: segment distance minus radius per capsule.
        double expect = 1e30;
        for (const Capsule& c : body.capsules) {
            Vec3 ab = c.b - c.a;
            double t = std::clamp(dot(x - c.a, ab) / norm2(ab), 0.0, 1.0);
            expect = std::min(expect, norm(x - (c.a + ab * t)) - c.radius);
        }
        CHECK(body.sdf(x) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("body sdf is eikonal away from the medial axis") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);
    Rng rng(17);
    PosedBody body = pose_body(tree, random_pose(tree, rng, 0.3), shape);
    const double h = 1e-5;
    int checked = 0;
    while (checked < 200) {
        Vec3 x{rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 2.5), rng.uniform(-1.5, 1.5)};
        // Keep clear of capsule interiors and of union ridges, where the
        // distance field is non-smooth.
        double d1 = 1e30, d2 = 1e30;
        for (const Capsule& c : body.capsules) {
            double d = capsule_sdf(x, c);
            if (d < d1) {
                d2 = d1;
                d1 = d;
            } else {
                d2 = std::min(d2, d);
            }
        }
        if (d1 < 0.01 || d1 > 0.8 || d2 - d1 < 1e-3) continue;
        ++checked;
        Vec3 g;
        for (int a = 0; a < 3; ++a) {
            Vec3 xp = x, xm = x;
            xp[a] += h;
            xm[a] -= h;
            g[a] = (body.sdf(xp) - body.sdf(xm)) / (2 * h);
        }
        CHECK(std::abs(norm(g) - 1.0) < 1e-3);
        // Analytic gradient agrees.
        CHECK(norm(g - body.sdf_gradient(x)) < 1e-3);
    }
}

TEST_CASE("projection") {
    Camera cam;
    cam.focal = 64;
    cam.cx = 32;
    cam.cy = 32;
    cam.R = Mat3::identity();
    cam.t = {0, 0, 0};

    SUBCASE("optical axis maps to the principal point") {
        Projection p = project(cam, {0, 0, 2.0});
        CHECK(p.ok);
        CHECK(p.u == doctest::Approx(32.0));
        CHECK(p.v == doctest::Approx(32.0));
    }
    SUBCASE("pinhole formula") {
        Projection p = project(cam, {0.1, 0, 1.0});
        CHECK(p.u == doctest::Approx(38.4));
        CHECK(p.v == doctest::Approx(32.0));
    }
    SUBCASE("doubling depth halves the offset from the principal point") {
        Projection p1 = project(cam, {0.1, 0.05, 1.0});
        Projection p2 = project(cam, {0.2, 0.10, 2.0});  // same ray, double depth
        CHECK(p1.u == doctest::Approx(p2.u));
        Projection p3 = project(cam, {0.1, 0.05, 2.0});
        CHECK(p3.u - 32.0 == doctest::Approx(0.5 * (p1.u - 32.0)));
        CHECK(p3.v - 32.0 == doctest::Approx(0.5 * (p1.v - 32.0)));
    }
    SUBCASE("behind-camera points are flagged") {
        CHECK_FALSE(project(cam, {0, 0, -1.0}).ok);
        CHECK_FALSE(project(cam, {0, 0, 0.0}).ok);
    }
}

TEST_CASE("camera validation") {
    Camera cam;
    cam.R(0, 0) = 2.0;  // not orthonormal
    CHECK_THROWS(cam.validate());
    Camera cam2;
    cam2.focal = -1;
    CHECK_THROWS(cam2.validate());
}

TEST_CASE("visibility of an isolated capsule") {
    KinematicTree tree = single_capsule_tree(0.8, 0.2);
    PosedBody body = pose_body(tree, Pose::rest(tree), ShapeParams::unit(tree));
    Camera cam = look_at_camera({0, 0.4, 0}, 0.0, 0.0, 2.5, 70, 64, 64);
    // Camera sits on the +z side.
    std::vector<Vec3> pts = {{0, 0.4, 0.2}, {0, 0.4, -0.2}};
    auto vis = visibility(pts, body, cam);
    CHECK(vis[0] == 1.0);
    CHECK(vis[1] == 0.0);
}

TEST_CASE("visibility agrees with a dense ray-march oracle") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);
    Rng rng(5);
    Pose pose = random_pose(tree, rng, 0.35);
    PosedBody body = pose_body(tree, pose, shape);
    SurfaceTemplate tmpl = sample_surface_template(tree, shape, 1000, 21);
    auto tf = forward_kinematics(tree, pose, shape);
    std::vector<Vec3> pts = skin_points(tmpl, tf);
    Camera cam = look_at_camera({0, 0.9, 0}, 0.7, 0.2, 2.6, 70, 64, 64);

    auto vis = visibility(pts, body, cam);
    Vec3 o = cam.origin();
    int agree = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
        Vec3 delta = pts[i] - o;
        double dist = norm(delta);
        Vec3 dir = delta / dist;
        bool blocked = false;
        for (double t = 0; t < dist - kVisibilityEps; t += 1e-3) {
            if (body.sdf(o + dir * t) < 0) {
                blocked = true;
                break;
            }
        }
        double oracle = blocked ? 0.0 : 1.0;
        if (oracle == vis[i]) ++agree;
        CHECK((vis[i] == 0.0 || vis[i] == 1.0));
    }
    CHECK((double)agree / (double)pts.size() >= 0.99);
}

TEST_CASE("surface template sampling") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);

    SUBCASE("rejects too-small point budgets") {
        CHECK_THROWS(sample_surface_template(tree, shape, 4 * (int)tree.bones.size() - 1, 1));
    }

    SUBCASE("N=512 default allocation is proportional to lateral area") {
        SurfaceTemplate tmpl = sample_surface_template(tree, shape, 512, 1);
        CHECK(tmpl.size() == 512);
        std::vector<int> counts(tree.bones.size(), 0);
        for (const SurfacePoint& p : tmpl.points) counts[p.bone]++;
        double total_area = 0;
        std::vector<double> area(tree.bones.size());
        for (size_t b = 0; b < tree.bones.size(); ++b) {
            area[b] = tree.bones[b].radius * tree.bones[b].length;
            total_area += area[b];
        }
        for (size_t b = 0; b < tree.bones.size(); ++b) {
            double expect = area[b] / total_area * 512;
            CHECK(std::abs(counts[b] - expect) <= 2.0);  // rounding + min-1 slack
        }
    }

    SUBCASE("all canonical points lie on the zero-pose surface") {
        SurfaceTemplate tmpl = sample_surface_template(tree, shape, 512, 9);
        PosedBody rest = pose_body(tree, Pose::rest(tree), shape);
        for (const SurfacePoint& p : tmpl.points) CHECK(std::abs(rest.sdf(p.canonical)) < 1e-6);
    }

    SUBCASE("weights are a partition of unity") {
        SurfaceTemplate tmpl = sample_surface_template(tree, shape, 512, 2);
        for (const SurfacePoint& p : tmpl.points) {
            double s = p.weights[0] + (p.bones[1] >= 0 ? p.weights[1] : 0.0);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }

    SUBCASE("correspondences are deterministic given the seed") {
        SurfaceTemplate a = sample_surface_template(tree, shape, 256, 42);
        SurfaceTemplate b = sample_surface_template(tree, shape, 256, 42);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a.points[i].bone == b.points[i].bone);
            CHECK(a.points[i].u == b.points[i].u);
            CHECK(a.points[i].phi == b.points[i].phi);
        }
    }
}

TEST_CASE("pose canonicalization wraps angle magnitude into [0, pi]") {
    KinematicTree tree = chain_tree();
    Pose p = Pose::rest(tree);
    p.rotations[1] = {0, 0, 2.0 * M_PI + 0.25};
    Mat3 before = rotation_from_axis_angle(p.rotations[1]);
    p.canonicalize();
    CHECK(norm(p.rotations[1]) <= M_PI + 1e-12);
    Mat3 after = rotation_from_axis_angle(p.rotations[1]);
    for (int i = 0; i < 9; ++i) CHECK(before.m[i] == doctest::Approx(after.m[i]).epsilon(1e-9));
}

TEST_CASE("body and camera records round-trip through text") {
    KinematicTree tree = default_tree();
    ShapeParams shape = ShapeParams::unit(tree);
    shape.length_scale[3] = 1.25;
    shape.radius_scale[7] = 0.8;
    Rng rng(1);
    Pose pose = random_pose(tree, rng);

    std::string text = body_to_text(tree, pose, shape);
    KinematicTree tree2;
    Pose pose2;
    ShapeParams shape2;
    body_from_text(text, tree2, pose2, shape2);
    CHECK(tree2.bones.size() == tree.bones.size());
    CHECK(tree2.joints.size() == tree.joints.size());
    CHECK(body_to_text(tree2, pose2, shape2) == text);

    Camera cam = look_at_camera({0, 0.9, 0}, 0.3, -0.1, 2.4, 70, 64, 64);
    CHECK(camera_to_text(camera_from_text(camera_to_text(cam))) == camera_to_text(cam));
}

TEST_CASE("default tree has 17 bones and a valid layout") {
    KinematicTree tree = default_tree();
    CHECK(tree.bones.size() == 17);
    tree.validate();
    // Standing on the ground plane, head above 1.7 m.
    PosedBody body = pose_body(tree, Pose::rest(tree), ShapeParams::unit(tree));
    Vec3 lo, hi;
    body.aabb(lo, hi);
    CHECK(lo.y > -0.15);
    CHECK(hi.y > 1.6);
}
