#include "s3f/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace s3f {

namespace fs = std::filesystem;

ShapeParams SceneBundle::clothed_shape() const {
    ShapeParams s = shape;
    for (size_t b = 0; b < s.radius_scale.size(); ++b) s.radius_scale[b] *= clothing_inflation[b];
    return s;
}

PosedBody SceneBundle::clothed_body() const { return pose_body(tree, pose, clothed_shape()); }

AlbedoPattern make_albedo_pattern(const KinematicTree& tree, Rng& rng) {
    AlbedoPattern p;
    p.bands_u = 3 + (int)rng.index(4);
    p.bands_phi = 4 + (int)rng.index(5);
    for (size_t b = 0; b < tree.bones.size(); ++b) {
        p.color_a.push_back({rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)});
        p.color_b.push_back({rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)});
    }
    return p;
}

Vec3 AlbedoPattern::at(int bone, double u, double phi) const {
    double pw = phi / (2.0 * M_PI);
    pw -= std::floor(pw);
    int cell = (int)std::floor(u * bands_u) + (int)std::floor(pw * bands_phi);
    return (cell % 2 == 0) ? color_a[bone] : color_b[bone];
}

Vec3 lambert_shade(const Vec3& albedo, const Vec3& normal, const LightParams& light) {
    double lambert = std::max(0.0, dot(normal, light.direction));
    double coef = light.ambient + light.diffuse * lambert;
    return {std::clamp(albedo.x * coef, 0.0, 1.0), std::clamp(albedo.y * coef, 0.0, 1.0),
            std::clamp(albedo.z * coef, 0.0, 1.0)};
}

namespace {

// Bone-local (u, phi) chart of a point rigidly attached to bone `b`,
// evaluated in the zero-pose frame (consistent across poses).
void bone_chart(const KinematicTree& tree, const ShapeParams& shape, const PosedBody& rest,
                int b, const Vec3& canonical, double& u, double& phi) {
    const Capsule& cap = rest.capsules[b];
    Vec3 ab = cap.b - cap.a;
    double len2 = norm2(ab);
    u = len2 > 0 ? std::clamp(dot(canonical - cap.a, ab) / len2, 0.0, 1.0) : 0.0;
    Vec3 axis = normalized(ab);
    Vec3 ref = std::abs(axis.y) < 0.99 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
    Vec3 n1 = normalized(cross(axis, ref));
    Vec3 n2 = cross(axis, n1);
    Vec3 radial = canonical - (cap.a + ab * u);
    phi = std::atan2(dot(radial, n2), dot(radial, n1));
    if (phi < 0) phi += 2.0 * M_PI;
    (void)tree;
    (void)shape;
}

}  // namespace

SceneBundle gen_scene(uint64_t seed, const SceneGenConfig& cfg) {
    Rng rng(seed);
    SceneBundle scene;
    scene.tree = default_tree();
    scene.shape = ShapeParams::unit(scene.tree);

    // Random bounded pose.
    Rng pose_rng = rng.fork(1);
    scene.pose = Pose::rest(scene.tree);
    for (size_t j = 1; j < scene.pose.rotations.size(); ++j)
        scene.pose.rotations[j] = {pose_rng.uniform(-cfg.pose_amplitude, cfg.pose_amplitude),
                                   pose_rng.uniform(-cfg.pose_amplitude, cfg.pose_amplitude),
                                   pose_rng.uniform(-cfg.pose_amplitude, cfg.pose_amplitude)};
    scene.pose.rotations[0] = {0, pose_rng.uniform(-0.3, 0.3), 0};

    // Fitted (noisy) parameters for the real branch.
    Rng fit_rng = rng.fork(2);
    scene.fit_pose = scene.pose;
    for (Vec3& r : scene.fit_pose.rotations)
        r += {fit_rng.uniform(-cfg.fit_rot_noise, cfg.fit_rot_noise),
              fit_rng.uniform(-cfg.fit_rot_noise, cfg.fit_rot_noise),
              fit_rng.uniform(-cfg.fit_rot_noise, cfg.fit_rot_noise)};
    scene.fit_pose.root_translation +=
        {fit_rng.uniform(-cfg.fit_trans_noise, cfg.fit_trans_noise),
         fit_rng.uniform(-cfg.fit_trans_noise, cfg.fit_trans_noise),
         fit_rng.uniform(-cfg.fit_trans_noise, cfg.fit_trans_noise)};
    scene.fit_shape = scene.shape;

    // Clothing: radius inflation on pelvis, spine and thighs.
    Rng cloth_rng = rng.fork(3);
    scene.clothing_inflation.assign(scene.tree.bones.size(), 1.0);
    for (size_t b = 0; b < scene.tree.bones.size(); ++b) {
        const std::string& name = scene.tree.bones[b].name;
        if (name == "pelvis" || name == "spine_lo" || name == "spine_up" || name == "l_thigh" ||
            name == "r_thigh")
            scene.clothing_inflation[b] = 1.0 + cloth_rng.uniform(0.15, cfg.max_inflation);
    }

    // Illumination.
    Rng light_rng = rng.fork(4);
    scene.light.direction = normalized(Vec3{light_rng.uniform(-0.6, 0.6),
                                            light_rng.uniform(0.1, 0.9),
                                            light_rng.uniform(0.2, 1.0)});
    scene.light.ambient = light_rng.uniform(0.2, 0.4);
    scene.light.diffuse = light_rng.uniform(0.5, 0.8);

    ShapeParams clothed = scene.clothed_shape();
    PosedBody body = scene.clothed_body();
    PosedBody rest_body = pose_body(scene.tree, Pose::rest(scene.tree), clothed);
    auto transforms = forward_kinematics(scene.tree, scene.pose, clothed);
    AlbedoPattern pattern = make_albedo_pattern(scene.tree, rng.fork(5));

    Vec3 lo, hi;
    body.aabb(lo, hi);
    Vec3 center = (lo + hi) * 0.5;

    // Cameras: view 0 frontal with probability cfg.frontal_prob, otherwise a
    // random azimuth; extra views spread evenly around the figure.
    Rng cam_rng = rng.fork(6);
    double azim0 = cam_rng.uniform() < cfg.frontal_prob ? 0.0 : cam_rng.uniform(0, 2.0 * M_PI);
    for (int v = 0; v < std::max(1, cfg.views); ++v) {
        double azim = azim0 + v * (2.0 * M_PI / std::max(1, cfg.views));
        double elev = cam_rng.uniform(-cfg.elevation_range, cfg.elevation_range);
        scene.cameras.push_back(look_at_camera(center, azim, elev, cfg.camera_distance,
                                               cfg.focal, cfg.image_size, cfg.image_size));
    }

    // Exact ray-cast rendering of every view.
    auto sdf = [&](const Vec3& p) { return body.sdf(p); };
    for (const Camera& cam : scene.cameras) {
        Image rgb(cfg.image_size, cfg.image_size, 3);
        Image mask(cfg.image_size, cfg.image_size, 1);
        Vec3 origin = cam.origin();
        double t_max = norm(hi - lo) + norm(center - origin) + 1.0;
        for (int y = 0; y < cfg.image_size; ++y) {
            for (int x = 0; x < cfg.image_size; ++x) {
                RayHit hit = sphere_trace(origin, cam.ray_direction(x, y), sdf, t_max);
                if (!hit.hit) continue;
                mask.at(y, x, 0) = 1.0;
                int b = body.nearest_bone(hit.position);
                Vec3 canonical = transforms[b].inverse().apply(hit.position);
                double u, phi;
                bone_chart(scene.tree, clothed, rest_body, b, canonical, u, phi);
                Vec3 albedo = pattern.at(b, u, phi);
                Vec3 n = body.sdf_gradient(hit.position);
                Vec3 c = lambert_shade(albedo, n, scene.light);
                rgb.at(y, x, 0) = c.x;
                rgb.at(y, x, 1) = c.y;
                rgb.at(y, x, 2) = c.z;
            }
        }
        scene.rgb.push_back(std::move(rgb));
        scene.mask.push_back(std::move(mask));
    }

    // Ground-truth surface samples: (bone, u, phi) lattice points rigidly
    // posed with their own bone, rejected if swallowed in this pose.
    Rng surf_rng = rng.fork(7);
    SurfaceTemplate clothed_tmpl =
        sample_surface_template(scene.tree, clothed, cfg.gt_surface_count * 2, surf_rng.bits());
    for (const SurfacePoint& sp : clothed_tmpl.points) {
        if ((int)scene.gt_surface.size() >= cfg.gt_surface_count) break;
        Vec3 posed = transforms[sp.bone].apply(sp.canonical);
        if (std::abs(body.sdf(posed)) > 1e-6) continue;  // swallowed at this pose
        SceneBundle::SurfaceSample s;
        s.pos = posed;
        s.albedo = pattern.at(sp.bone, sp.u, sp.phi);
        s.shaded = lambert_shade(s.albedo, body.sdf_gradient(posed), scene.light);
        scene.gt_surface.push_back(s);
    }

    // Labeled near-surface points: surface points plus 1 cm Gaussian noise.
    Rng label_rng = rng.fork(8);
    while ((int)scene.gt_labels.size() < cfg.gt_label_count && !scene.gt_surface.empty()) {
        const auto& s = scene.gt_surface[label_rng.index(scene.gt_surface.size())];
        Vec3 p = s.pos + label_rng.normal_vec3(cfg.label_noise);
        scene.gt_labels.push_back({p, body.sdf(p) < 0 ? uint8_t(1) : uint8_t(0)});
    }
    return scene;
}

namespace {

void save_light(const std::string& path, const LightParams& l) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "s3f_light 1\n"
        << l.direction.x << " " << l.direction.y << " " << l.direction.z << "\n"
        << l.ambient << " " << l.diffuse << "\n";
}

LightParams load_light(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string tag;
    int version;
    LightParams l;
    in >> tag >> version >> l.direction.x >> l.direction.y >> l.direction.z >> l.ambient >>
        l.diffuse;
    if (!in || tag != "s3f_light") throw std::runtime_error("bad light record " + path);
    return l;
}

void save_clothing(const std::string& path, const std::vector<double>& infl) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "s3f_clothing 1 " << infl.size() << "\n";
    for (double v : infl) out << v << "\n";
}

std::vector<double> load_clothing(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string tag;
    int version;
    size_t n;
    in >> tag >> version >> n;
    std::vector<double> out(n);
    for (double& v : out) in >> v;
    if (!in || tag != "s3f_clothing") throw std::runtime_error("bad clothing record " + path);
    return out;
}

}  // namespace

void save_scene(const std::string& dir, const SceneBundle& scene) {
    fs::create_directories(dir);
    auto at = [&](const std::string& f) { return (fs::path(dir) / f).string(); };

    write_ppm(at("rgb.ppm"), scene.rgb[0]);
    write_pgm(at("mask.pgm"), scene.mask[0]);
    save_camera(at("camera.txt"), scene.cameras[0]);
    for (size_t v = 1; v < scene.cameras.size(); ++v) {
        std::string k = std::to_string(v);
        write_ppm(at("rgb_v" + k + ".ppm"), scene.rgb[v]);
        write_pgm(at("mask_v" + k + ".pgm"), scene.mask[v]);
        save_camera(at("camera_v" + k + ".txt"), scene.cameras[v]);
    }
    save_body(at("body.txt"), scene.tree, scene.pose, scene.shape);
    save_body(at("body_fit.txt"), scene.tree, scene.fit_pose, scene.fit_shape);
    save_clothing(at("clothing.txt"), scene.clothing_inflation);
    save_light(at("light.txt"), scene.light);

    {
        std::ofstream out(at("gt_surface.bin"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write gt_surface.bin");
        for (const auto& s : scene.gt_surface) {
            float rec[9] = {(float)s.pos.x,    (float)s.pos.y,    (float)s.pos.z,
                            (float)s.albedo.x, (float)s.albedo.y, (float)s.albedo.z,
                            (float)s.shaded.x, (float)s.shaded.y, (float)s.shaded.z};
            out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
        }
    }
    {
        std::ofstream out(at("gt_labels.bin"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write gt_labels.bin");
        for (const auto& l : scene.gt_labels) {
            float xyz[3] = {(float)l.pos.x, (float)l.pos.y, (float)l.pos.z};
            out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
            out.write(reinterpret_cast<const char*>(&l.inside), 1);
        }
    }
}

SceneBundle load_scene(const std::string& dir) {
    auto at = [&](const std::string& f) { return (fs::path(dir) / f).string(); };
    if (!fs::exists(at("body.txt"))) throw std::runtime_error("not a scene directory: " + dir);

    SceneBundle scene;
    load_body(at("body.txt"), scene.tree, scene.pose, scene.shape);
    {
        KinematicTree t2;
        load_body(at("body_fit.txt"), t2, scene.fit_pose, scene.fit_shape);
    }
    scene.clothing_inflation = load_clothing(at("clothing.txt"));
    scene.light = load_light(at("light.txt"));
    scene.rgb.push_back(read_ppm(at("rgb.ppm")));
    scene.mask.push_back(read_pgm(at("mask.pgm")));
    scene.cameras.push_back(load_camera(at("camera.txt")));
    for (size_t v = 1;; ++v) {
        std::string k = std::to_string(v);
        if (!fs::exists(at("camera_v" + k + ".txt"))) break;
        scene.rgb.push_back(read_ppm(at("rgb_v" + k + ".ppm")));
        scene.mask.push_back(read_pgm(at("mask_v" + k + ".pgm")));
        scene.cameras.push_back(load_camera(at("camera_v" + k + ".txt")));
    }

    {
        std::ifstream in(at("gt_surface.bin"), std::ios::binary);
        if (!in) throw std::runtime_error("cannot open gt_surface.bin in " + dir);
        float rec[9];
        while (in.read(reinterpret_cast<char*>(rec), sizeof(rec))) {
            SceneBundle::SurfaceSample s;
            s.pos = {rec[0], rec[1], rec[2]};
            s.albedo = {rec[3], rec[4], rec[5]};
            s.shaded = {rec[6], rec[7], rec[8]};
            scene.gt_surface.push_back(s);
        }
    }
    {
        std::ifstream in(at("gt_labels.bin"), std::ios::binary);
        if (!in) throw std::runtime_error("cannot open gt_labels.bin in " + dir);
        float xyz[3];
        uint8_t label;
        while (in.read(reinterpret_cast<char*>(xyz), sizeof(xyz)) &&
               in.read(reinterpret_cast<char*>(&label), 1)) {
            scene.gt_labels.push_back({{xyz[0], xyz[1], xyz[2]}, label});
        }
    }
    return scene;
}

}  // namespace s3f
