#include "s3f/extract.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "s3f/mc_tables.hpp"

namespace s3f {

namespace {

// Cube corner offsets and the edge -> (corner, corner) table in the standard
// marching-cubes layout.
const int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                           {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
const int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                          {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

TriMesh marching_cubes(const std::function<double(const Vec3&)>& sdf, const Vec3& lo,
                       const Vec3& hi, int resolution) {
    return marching_cubes(
        [&](const std::vector<Vec3>& q, std::vector<double>& out) {
            out.resize(q.size());
            for (size_t i = 0; i < q.size(); ++i) out[i] = sdf(q[i]);
        },
        lo, hi, resolution);
}

TriMesh marching_cubes(const SdfBatchFn& sdf, const Vec3& lo, const Vec3& hi, int resolution) {
    const int r = resolution;
    if (r < 2) throw std::invalid_argument("marching_cubes: resolution must be >= 2");
    const int n = r + 1;
    Vec3 step{(hi.x - lo.x) / r, (hi.y - lo.y) / r, (hi.z - lo.z) / r};

    // Dense grid evaluation in z-major slabs to bound the batch size.
    std::vector<double> grid((size_t)n * n * n);
    {
        std::vector<Vec3> q;
        q.reserve((size_t)n * n);
        std::vector<double> vals;
        for (int z = 0; z < n; ++z) {
            q.clear();
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    q.push_back({lo.x + x * step.x, lo.y + y * step.y, lo.z + z * step.z});
            sdf(q, vals);
            std::copy(vals.begin(), vals.end(), grid.begin() + (size_t)z * n * n);
        }
    }
    auto value = [&](int x, int y, int z) -> double {
        return grid[((size_t)z * n + y) * n + x];
    };

    TriMesh mesh;
    // Welding map: edges keyed by (grid vertex id, axis).
    std::map<std::pair<size_t, int>, int> edge_vertex;
    auto vertex_on_edge = [&](int x, int y, int z, int axis, double va, double vb) -> int {
        size_t base = ((size_t)z * n + y) * n + x;
        auto key = std::make_pair(base, axis);
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        double denom = vb - va;
        double t = std::abs(denom) > 1e-30 ? -va / denom : 0.5;
        t = std::clamp(t, 0.0, 1.0);
        Vec3 p{lo.x + x * step.x, lo.y + y * step.y, lo.z + z * step.z};
        if (axis == 0) p.x = lo.x + (x + t) * step.x;
        if (axis == 1) p.y = lo.y + (y + t) * step.y;
        if (axis == 2) p.z = lo.z + (z + t) * step.z;
        int id = (int)mesh.vertices.size();
        mesh.vertices.push_back(p);
        edge_vertex.emplace(key, id);
        return id;
    };

    for (int z = 0; z < r; ++z) {
        for (int y = 0; y < r; ++y) {
            for (int x = 0; x < r; ++x) {
                double v[8];
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    v[c] = value(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
                    if (v[c] < 0) cube |= 1 << c;
                }
                if (kMcEdgeTable[cube] == 0) continue;

                int everts[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(kMcEdgeTable[cube] & (1 << e))) continue;
                    int ca = kEdge[e][0], cb = kEdge[e][1];
                    // Canonical orientation: the edge's lower corner plus axis.
                    int ax = kCorner[ca][0], ay = kCorner[ca][1], az = kCorner[ca][2];
                    int bx = kCorner[cb][0], by = kCorner[cb][1], bz = kCorner[cb][2];
                    int axis = bx != ax ? 0 : (by != ay ? 1 : 2);
                    bool swapped = (bx < ax) || (by < ay) || (bz < az);
                    int cx = x + std::min(ax, bx), cy = y + std::min(ay, by),
                        cz = z + std::min(az, bz);
                    double va = swapped ? v[cb] : v[ca];
                    double vb = swapped ? v[ca] : v[cb];
                    everts[e] = vertex_on_edge(cx, cy, cz, axis, va, vb);
                }
                for (const int* tri = kMcTriTable[cube]; *tri != -1; tri += 3) {
                    // Table winding assumes inside < 0; flip for outward
                    // normals under our negative-inside convention.
                    mesh.triangles.push_back({everts[tri[0]], everts[tri[2]], everts[tri[1]]});
                }
            }
        }
    }

    if (mesh.triangles.empty())
        std::fprintf(stderr, "marching_cubes: no zero crossing in the given box\n");
    clean_mesh(mesh);
    compute_vertex_normals(mesh);
    return mesh;
}

void clean_mesh(TriMesh& mesh) {
    std::vector<std::array<int, 3>> kept;
    kept.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        double area2 = norm(cross(b - a, c - a));
        if (area2 > 2e-12) kept.push_back(t);  // area = area2 / 2
    }
    mesh.triangles.swap(kept);

    // Drop unreferenced vertices.
    std::vector<int> remap(mesh.vertices.size(), -1);
    std::vector<Vec3> verts;
    for (auto& t : mesh.triangles) {
        for (int& i : t) {
            if (remap[i] < 0) {
                remap[i] = (int)verts.size();
                verts.push_back(mesh.vertices[i]);
            }
            i = remap[i];
        }
    }
    mesh.vertices.swap(verts);
    mesh.normals.clear();
}

void compute_vertex_normals(TriMesh& mesh) {
    mesh.normals.assign(mesh.vertices.size(), Vec3{0, 0, 0});
    for (const auto& t : mesh.triangles) {
        Vec3 fn = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                        mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        for (int i : t) mesh.normals[i] += fn;
    }
    for (Vec3& nrm : mesh.normals) nrm = normalized(nrm);
}

double mesh_volume(const TriMesh& mesh) {
    double v = 0;
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        v += dot(a, cross(b, c)) / 6.0;
    }
    return v;
}

int euler_characteristic(const TriMesh& mesh) {
    std::map<std::pair<int, int>, int> edges;
    for (const auto& t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            int a = t[e], b = t[(e + 1) % 3];
            edges[{std::min(a, b), std::max(a, b)}]++;
        }
    return (int)mesh.vertices.size() - (int)edges.size() + (int)mesh.triangles.size();
}

double orientation_agreement(const TriMesh& mesh,
                             const std::function<Vec3(const Vec3&)>& grad) {
    if (mesh.triangles.empty()) return 1.0;
    int good = 0;
    for (const auto& t : mesh.triangles) {
        Vec3 centroid = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
        Vec3 fn = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                        mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        if (dot(fn, grad(centroid)) > 0) ++good;
    }
    return (double)good / (double)mesh.triangles.size();
}

PointGrid::PointGrid(const std::vector<Vec3>& points, double cell) : pts_(points) {
    if (pts_.empty()) return;
    Vec3 hi = pts_[0];
    lo_ = pts_[0];
    for (const Vec3& p : pts_)
        for (int c = 0; c < 3; ++c) {
            lo_[c] = std::min(lo_[c], p[c]);
            hi[c] = std::max(hi[c], p[c]);
        }
    Vec3 span = hi - lo_;
    double diag = std::max({span.x, span.y, span.z, 1e-6});
    // Aim at a few points per cell.
    cell_ = cell > 0 ? cell : std::max(1e-4, diag / std::max(4.0, std::cbrt((double)pts_.size())));
    nx_ = std::max(1, (int)(span.x / cell_) + 1);
    ny_ = std::max(1, (int)(span.y / cell_) + 1);
    nz_ = std::max(1, (int)(span.z / cell_) + 1);
    cells_.resize((size_t)nx_ * ny_ * nz_);
    for (size_t i = 0; i < pts_.size(); ++i) {
        int x = std::min(nx_ - 1, (int)((pts_[i].x - lo_.x) / cell_));
        int y = std::min(ny_ - 1, (int)((pts_[i].y - lo_.y) / cell_));
        int z = std::min(nz_ - 1, (int)((pts_[i].z - lo_.z) / cell_));
        cells_[((size_t)z * ny_ + y) * nx_ + x].push_back((int)i);
    }
}

int PointGrid::nearest(const Vec3& q, double* d2_out) const {
    if (pts_.empty()) {
        if (d2_out) *d2_out = std::numeric_limits<double>::infinity();
        return -1;
    }
    int qx = std::clamp((int)((q.x - lo_.x) / cell_), 0, nx_ - 1);
    int qy = std::clamp((int)((q.y - lo_.y) / cell_), 0, ny_ - 1);
    int qz = std::clamp((int)((q.z - lo_.z) / cell_), 0, nz_ - 1);
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    int max_ring = std::max({nx_, ny_, nz_});
    for (int ring = 0; ring <= max_ring; ++ring) {
        // Once a hit exists, one extra ring guarantees correctness.
        if (arg >= 0 && (double)(ring - 1) * cell_ > std::sqrt(best)) break;
        bool any_cell = false;
        for (int z = qz - ring; z <= qz + ring; ++z) {
            if (z < 0 || z >= nz_) continue;
            for (int y = qy - ring; y <= qy + ring; ++y) {
                if (y < 0 || y >= ny_) continue;
                for (int x = qx - ring; x <= qx + ring; ++x) {
                    if (x < 0 || x >= nx_) continue;
                    // Shell only.
                    if (ring > 0 && std::abs(x - qx) != ring && std::abs(y - qy) != ring &&
                        std::abs(z - qz) != ring)
                        continue;
                    any_cell = true;
                    for (int i : cells_[((size_t)z * ny_ + y) * nx_ + x]) {
                        double d2 = norm2(pts_[i] - q);
                        if (d2 < best) {
                            best = d2;
                            arg = i;
                        }
                    }
                }
            }
        }
        if (!any_cell && arg >= 0) break;
    }
    if (d2_out) *d2_out = best;
    return arg;
}

double chamfer_squared(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
    PointGrid ga(a), gb(b);
    double sum_ab = 0, sum_ba = 0;
    for (const Vec3& p : a) {
        double d2;
        gb.nearest(p, &d2);
        sum_ab += d2;
    }
    for (const Vec3& p : b) {
        double d2;
        ga.nearest(p, &d2);
        sum_ba += d2;
    }
    return 0.5 * (sum_ab / a.size() + sum_ba / b.size());
}

double occupancy_iou(const SdfBatchFn& sdf_a, const SdfBatchFn& sdf_b, const Vec3& lo,
                     const Vec3& hi, int resolution) {
    const int r = resolution;
    std::vector<Vec3> q;
    q.reserve((size_t)r * r);
    std::vector<double> va, vb;
    long long inter = 0, uni = 0;
    for (int z = 0; z < r; ++z) {
        q.clear();
        for (int y = 0; y < r; ++y)
            for (int x = 0; x < r; ++x)
                q.push_back({lo.x + (x + 0.5) * (hi.x - lo.x) / r,
                             lo.y + (y + 0.5) * (hi.y - lo.y) / r,
                             lo.z + (z + 0.5) * (hi.z - lo.z) / r});
        sdf_a(q, va);
        sdf_b(q, vb);
        for (size_t i = 0; i < q.size(); ++i) {
            bool ia = va[i] < 0, ib = vb[i] < 0;
            inter += (ia && ib);
            uni += (ia || ib);
        }
    }
    return uni == 0 ? 1.0 : (double)inter / (double)uni;
}

double normal_consistency(const std::vector<Vec3>& pred_pts, const std::vector<Vec3>& pred_n,
                          const std::vector<Vec3>& gt_pts, const std::vector<Vec3>& gt_n) {
    if (pred_pts.empty() || gt_pts.empty()) return 0.0;
    PointGrid grid(pred_pts);
    double acc = 0;
    for (size_t i = 0; i < gt_pts.size(); ++i) {
        int j = grid.nearest(gt_pts[i]);
        acc += std::abs(dot(normalized(gt_n[i]), normalized(pred_n[j])));
    }
    return acc / (double)gt_pts.size();
}

double color_psnr(const std::vector<Vec3>& pred_pts, const std::vector<Vec3>& pred_color,
                  const std::vector<Vec3>& gt_pts, const std::vector<Vec3>& gt_color) {
    if (pred_pts.empty() || gt_pts.empty()) return 0.0;
    PointGrid grid(pred_pts);
    double mse = 0;
    for (size_t i = 0; i < gt_pts.size(); ++i) {
        int j = grid.nearest(gt_pts[i]);
        mse += norm2(gt_color[i] - pred_color[j]) / 3.0;
    }
    mse /= (double)gt_pts.size();
    if (mse < 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double image_psnr(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("image_psnr size mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= (double)a.size();
    if (mse < 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

void write_ply(const std::string& path, const TriMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    bool colors = mesh.albedo.size() == mesh.vertices.size() &&
                  mesh.shaded.size() == mesh.vertices.size();
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property float nx\nproperty float ny\nproperty float nz\n";
    if (colors) {
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
        out << "property uchar shaded_red\nproperty uchar shaded_green\nproperty uchar "
               "shaded_blue\n";
    }
    out << "element face " << mesh.triangles.size() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    auto byte = [](double v) { return (int)std::lround(std::clamp(v, 0.0, 1.0) * 255.0); };
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& p = mesh.vertices[i];
        Vec3 nrm = i < mesh.normals.size() ? mesh.normals[i] : Vec3{0, 0, 0};
        out << (float)p.x << " " << (float)p.y << " " << (float)p.z << " " << (float)nrm.x << " "
            << (float)nrm.y << " " << (float)nrm.z;
        if (colors) {
            out << " " << byte(mesh.albedo[i].x) << " " << byte(mesh.albedo[i].y) << " "
                << byte(mesh.albedo[i].z) << " " << byte(mesh.shaded[i].x) << " "
                << byte(mesh.shaded[i].y) << " " << byte(mesh.shaded[i].z);
        }
        out << "\n";
    }
    for (const auto& t : mesh.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
}

TriMesh read_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    size_t n_verts = 0, n_faces = 0;
    int props = 0;
    bool colors = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "element") {
            std::string what;
            size_t count;
            ls >> what >> count;
            if (what == "vertex") n_verts = count;
            if (what == "face") n_faces = count;
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (name == "red") colors = true;
            if (type != "list") ++props;
        } else if (tok == "end_header") {
            break;
        }
    }
    TriMesh mesh;
    mesh.vertices.resize(n_verts);
    mesh.normals.resize(n_verts);
    if (colors) {
        mesh.albedo.resize(n_verts);
        mesh.shaded.resize(n_verts);
    }
    for (size_t i = 0; i < n_verts; ++i) {
        std::getline(in, line);
        std::istringstream ls(line);
        Vec3& p = mesh.vertices[i];
        Vec3& nrm = mesh.normals[i];
        ls >> p.x >> p.y >> p.z >> nrm.x >> nrm.y >> nrm.z;
        if (colors) {
            int r, g, b, sr, sg, sb;
            ls >> r >> g >> b >> sr >> sg >> sb;
            mesh.albedo[i] = {r / 255.0, g / 255.0, b / 255.0};
            mesh.shaded[i] = {sr / 255.0, sg / 255.0, sb / 255.0};
        }
    }
    mesh.triangles.resize(n_faces);
    for (size_t i = 0; i < n_faces; ++i) {
        std::getline(in, line);
        std::istringstream ls(line);
        int k;
        ls >> k >> mesh.triangles[i][0] >> mesh.triangles[i][1] >> mesh.triangles[i][2];
        if (k != 3) throw std::runtime_error("read_ply: only triangle meshes supported");
    }
    if (!in) throw std::runtime_error("truncated PLY " + path);
    return mesh;
}

}  // namespace s3f
