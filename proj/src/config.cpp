#include "s3f/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace s3f {

Config::Config() {
    auto reg = [&](const char* key, const char* def, const char* unit, const char* desc) {
        entries_[key] = Entry{def, def, unit, desc};
    };
    // Model dimensions (desk scale; full-scale reference in parentheses).
    reg("image_size", "64", "px", "square input resolution (full scale: 512)");
    reg("points", "512", "", "body surface points N (full scale: 18000)");
    reg("template_seed", "7", "", "seed for the surface template lattice");
    reg("feat_dim", "32", "", "feature image channels (full scale: 256)");
    reg("disp_channels", "8", "", "trailing channels feeding displacement (full scale: 64)");
    reg("feat_channels", "24", "", "leading channels pooled after displacement (full scale: 192)");
    reg("code_dim", "8", "", "semantic code width (full scale: 256)");
    reg("illum_dim", "16", "", "illumination code width (full scale: 8x8x512 bottleneck)");
    reg("key_dim", "64", "", "point/query embedding width (full scale: 256)");
    reg("head_width", "128", "", "geometry/albedo MLP width (full scale: 512, 8 layers)");
    reg("posenc_freqs", "6", "", "positional encoding frequencies");
    reg("chunk", "1024", "", "queries per attention call");
    reg("d_max", "0.30", "m", "point displacement clamp");
    reg("ds_max", "0.5", "m", "signed-distance residual clamp");
    reg("use_displacement", "1", "", "0 disables free point displacement (ablation)");
    reg("use_3nn", "0", "", "1 replaces attention by 3-NN feature interpolation (ablation)");
    reg("shading", "1", "", "0 fixes the shading coefficient to 1 (ablation)");
    reg("init_seed", "1", "", "weight initialization seed");
    reg("beta_init", "0.1", "", "initial density sharpness");

    // Rendering.
    reg("ray_samples", "32", "", "samples per ray S (full scale: 64)");
    reg("bound_pad", "0.10", "m", "padding beyond the body z-extent");
    reg("silhouette_threshold", "0.9", "", "opacity level extracted as the silhouette");

    // Training-time sampling.
    reg("pixels_per_image", "32", "", "ray pixels per image per step");
    reg("fg_fraction", "0.75", "", "fraction of ray pixels inside the mask");
    reg("patch_size", "16", "px", "structural patch side");
    reg("patch_ray_samples", "4", "", "ray samples for patch rendering (quadrature-reduced)");
    reg("surface_points", "128", "", "on-surface 3D samples per step");
    reg("near_points", "128", "", "labeled near-surface samples per step");
    reg("eikonal_points", "128", "", "Eikonal regularization samples per step");
    reg("eikonal_noise", "0.10", "m", "noise around body points for the Eikonal set");
    reg("delta_ref", "0.01", "m", "density-to-probability scale for the label loss");

    // Loss weights.
    reg("lambda_rgb", "10", "", "pixel color loss weight");
    reg("lambda_patch", "30", "", "multi-scale patch gradient loss weight");
    reg("lambda_mask", "5", "", "mask loss weight");
    reg("lambda_eik", "0.1", "", "Eikonal loss weight");
    reg("lambda_rgb3d", "200", "", "surface albedo/shaded color loss weight");
    reg("lambda_label3d", "30", "", "inside/outside BCE loss weight");

    // Optimization.
    reg("steps", "2000", "", "training steps (full scale: 500000)");
    reg("lr", "1e-4", "", "Adam learning rate");
    reg("lr_decay", "0.9", "", "multiplicative decay factor");
    reg("lr_decay_every", "500", "steps", "decay interval (full scale: 50000)");
    reg("checkpoint_every", "500", "steps", "checkpoint interval");
    reg("seed", "1", "", "master seed for training/generation commands");

    // Scene generation.
    reg("scene_count", "8", "", "scenes to generate");
    reg("scene_views", "1", "", "cameras per scene");
    reg("frontal_prob", "0.4", "", "probability of a frontal view");
    reg("elevation_deg", "20", "deg", "camera elevation range");
    reg("pose_amplitude", "0.35", "rad", "per-joint pose range");
    reg("max_inflation", "0.40", "", "max clothing radius inflation");
    reg("fit_rot_noise", "0.15", "rad", "fit error rotation noise");
    reg("fit_trans_noise", "0.02", "m", "fit error translation noise");
    reg("focal", "72", "px", "camera focal length");
    reg("camera_distance", "2.6", "m", "camera orbit radius");
    reg("gt_surface_count", "1024", "", "stored surface samples per scene");
    reg("gt_label_count", "1024", "", "stored labeled points per scene");
    reg("label_noise", "0.01", "m", "noise for labeled near-surface points");

    // Extraction and evaluation.
    reg("mc_resolution", "96", "", "marching cubes grid (full scale: 512)");
    reg("grid_pad", "0.15", "m", "padding around the body box for extraction");
    reg("iou_resolution", "64", "", "occupancy grid for the IoU metric");
    reg("eval_points", "8000", "", "surface samples for chamfer evaluation");
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->second.value = value;
}

void Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            // Blank or comment-only lines are fine.
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (!blank)
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

double Config::num(const std::string& key) const {
    const std::string& v = str(key);
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("config key '" + key + "': bad number " + v);
    return out;
}

int Config::integer(const std::string& key) const {
    double v = num(key);
    int i = (int)v;
    if ((double)i != v) throw std::invalid_argument("config key '" + key + "' must be integral");
    return i;
}

uint64_t Config::seed(const std::string& key) const { return (uint64_t)std::stoull(str(key)); }

bool Config::flag(const std::string& key) const { return num(key) != 0; }

const std::string& Config::str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    return it->second.value;
}

std::string Config::help() const {
    std::ostringstream os;
    for (const auto& [key, e] : entries_) {
        os << "  " << key << " = " << e.def;
        if (!e.unit.empty()) os << " [" << e.unit << "]";
        os << "\n      " << e.desc << "\n";
    }
    return os.str();
}

}  // namespace s3f
