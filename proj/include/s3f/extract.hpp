#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "s3f/vec.hpp"

namespace s3f {

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> normals;  // per vertex
    std::vector<Vec3> albedo;   // optional, per vertex
    std::vector<Vec3> shaded;   // optional, per vertex

    bool empty() const { return triangles.empty(); }
};

// Batched SDF evaluator: fills `out` with one value per query point.
using SdfBatchFn = std::function<void(const std::vector<Vec3>&, std::vector<double>&)>;

// Standard marching cubes over a regular grid with edge interpolation and
// vertex welding; triangles are oriented so normals align with the SDF
// gradient. An empty mesh (no zero crossing) is returned with a warning on
// stderr.
TriMesh marching_cubes(const SdfBatchFn& sdf, const Vec3& lo, const Vec3& hi, int resolution);
TriMesh marching_cubes(const std::function<double(const Vec3&)>& sdf, const Vec3& lo,
                       const Vec3& hi, int resolution);

// Removes triangles with area < 1e-12 m^2 and unreferenced vertices.
void clean_mesh(TriMesh& mesh);

// Per-vertex normals averaged from face normals (used when an SDF gradient is
// not available).
void compute_vertex_normals(TriMesh& mesh);

double mesh_volume(const TriMesh& mesh);          // signed, via divergence theorem
int euler_characteristic(const TriMesh& mesh);    // V - E + F

// Fraction of faces whose normal agrees (positive dot) with the SDF gradient
// at the face centroid.
double orientation_agreement(const TriMesh& mesh, const std::function<Vec3(const Vec3&)>& grad);

// Mean bidirectional squared nearest-neighbor distance (m^2). Reported
// metrics multiply by 1e3. Returns +inf if either set is empty.
double chamfer_squared(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Occupancy IoU of two SDFs sampled on a regular grid over [lo, hi].
double occupancy_iou(const SdfBatchFn& sdf_a, const SdfBatchFn& sdf_b, const Vec3& lo,
                     const Vec3& hi, int resolution);

// Mean |cos| between each gt normal and the normal of its nearest predicted
// point.
double normal_consistency(const std::vector<Vec3>& pred_pts, const std::vector<Vec3>& pred_n,
                          const std::vector<Vec3>& gt_pts, const std::vector<Vec3>& gt_n);

// PSNR (dB) of predicted colors against gt colors matched by nearest
// neighbor; capped at 99 dB for (near-)zero error.
double color_psnr(const std::vector<Vec3>& pred_pts, const std::vector<Vec3>& pred_color,
                  const std::vector<Vec3>& gt_pts, const std::vector<Vec3>& gt_color);

double image_psnr(const std::vector<double>& a, const std::vector<double>& b);

struct Metrics {
    double chamfer_e3 = 0;  // squared chamfer x 1e3
    double iou = 0;
    double nc = 0;
    double psnr_albedo = 0;
    double psnr_shaded = 0;
};

// ASCII PLY with per-vertex position, normal, albedo RGB and shaded RGB.
void write_ply(const std::string& path, const TriMesh& mesh);
TriMesh read_ply(const std::string& path);

// Uniform-grid nearest neighbor index over a fixed point set.
class PointGrid {
  public:
    explicit PointGrid(const std::vector<Vec3>& points, double cell = 0.0);
    // Index of the nearest point and its squared distance.
    int nearest(const Vec3& q, double* d2_out = nullptr) const;

  private:
    const std::vector<Vec3> pts_;
    Vec3 lo_;
    double cell_ = 0.05;
    int nx_ = 1, ny_ = 1, nz_ = 1;
    std::vector<std::vector<int>> cells_;
};

}  // namespace s3f
