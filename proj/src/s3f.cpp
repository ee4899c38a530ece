#include "s3f/s3f.hpp"

#include <cmath>
#include <stdexcept>

namespace s3f {

using nn::Value;
using nn::TensorShape;
using namespace nn::ops;

SemanticCodes make_semantic_codes(nn::ParamStore& store, int n_points, int code_dim, Rng& rng) {
    SemanticCodes c;
    c.table = store.create("s3f.codes", TensorShape::mat(n_points, code_dim));
    nn::xavier_init(c.table, code_dim, code_dim, rng);
    return c;
}

DisplacementNet make_displacement_net(nn::ParamStore& store, int in_dim, Rng& rng) {
    DisplacementNet net;
    net.l0 = nn::make_linear(store, "disp.l0", in_dim, 64, rng);
    net.l1 = nn::make_linear(store, "disp.l1", 64, 3, rng, /*zero_init=*/true);
    return net;
}

Value project_points(const Camera& cam, const Value& pts, std::vector<uint8_t>& valid) {
    if (pts.shape().rank != 2 || pts.shape().dims[1] != 3)
        throw std::invalid_argument("project_points needs (N,3)");
    int n = pts.shape().dims[0];
    // Rows in camera frame, then u = f x / z + cx.
    std::vector<Mat3> rot(n, cam.R);
    std::vector<Vec3> tr(n, cam.t);
    Value pc = affine_rows(pts, std::move(rot), std::move(tr));
    valid.assign(n, 1);
    const auto& d = pc.data();
    for (int i = 0; i < n; ++i)
        if (d[3 * i + 2] <= 1e-6) valid[i] = 0;
    Value z = clamp(slice_cols(pc, 2, 3), 1e-6, 1e30);
    Value u = add_const(scale(div(slice_cols(pc, 0, 1), z), cam.focal), cam.cx);
    Value v = add_const(scale(div(slice_cols(pc, 1, 2), z), cam.focal), cam.cy);
    return concat_cols(u, v);
}

namespace {

Value pool_at(const Value& featimg, const Camera& cam, const Value& pts, int c0, int c1,
              std::vector<uint8_t>& oob) {
    std::vector<uint8_t> valid;
    Value uv = project_points(cam, pts, valid);
    Value all = bilinear_sample(featimg, uv, valid, oob);
    int total = featimg.shape().dims[0];
    if (c0 == 0 && c1 == total) return all;
    return slice_cols(all, c0, c1);
}

}  // namespace

Value pool_initial(const Value& featimg, const Camera& cam, const std::vector<Vec3>& v,
                   const S3FConfig& cfg, std::vector<uint8_t>& oob) {
    int total = featimg.shape().dims[0];
    Value pts = Value::zeros(TensorShape::mat((int)v.size(), 3));
    auto& d = pts.data_mut();
    for (size_t i = 0; i < v.size(); ++i) {
        d[3 * i] = v[i].x;
        d[3 * i + 1] = v[i].y;
        d[3 * i + 2] = v[i].z;
    }
    return pool_at(featimg, cam, pts, total - cfg.disp_channels, total, oob);
}

Value pool_final(const Value& featimg, const Camera& cam, const Value& v_prime,
                 const S3FConfig& cfg, std::vector<uint8_t>& oob) {
    return pool_at(featimg, cam, v_prime, 0, cfg.feat_channels, oob);
}

Value displace(const std::vector<Vec3>& v, const Value& pooled8, const SemanticCodes& codes,
               const DisplacementNet& net, const Camera& cam, double d_max) {
    int n = (int)v.size();
    if (pooled8.shape().dims[0] != n || codes.table.shape().dims[0] != n)
        throw std::invalid_argument("displace: row count mismatch");

    Value pts = Value::zeros(TensorShape::mat(n, 3));
    Value pts_cam = Value::zeros(TensorShape::mat(n, 3));
    {
        auto& dw = pts.data_mut();
        auto& dc = pts_cam.data_mut();
        for (int i = 0; i < n; ++i) {
            Vec3 c = cam.to_camera(v[i]);
            dw[3 * i] = v[i].x;
            dw[3 * i + 1] = v[i].y;
            dw[3 * i + 2] = v[i].z;
            dc[3 * i] = c.x;
            dc[3 * i + 1] = c.y;
            dc[3 * i + 2] = c.z;
        }
    }

    Value in = concat_cols(concat_cols(pooled8, codes.table), pts_cam);
    Value raw = net.l1(leaky_relu(net.l0(in)));  // camera-frame displacement

    // Saturate the norm: |out| = d_max * tanh(|raw| / d_max) < d_max.
    Value n2 = row_sums(square(raw));
    Value len = sqrt(add_const(n2, 1e-24));
    Value factor = div(scale(ops::tanh(scale(len, 1.0 / d_max)), d_max), len);
    Value delta_cam = mul_rowscale(raw, factor);

    // Back to world coordinates: row-vector form of R^T d is d * R.
    Value r = Value::zeros(TensorShape::mat(3, 3));
    for (int i = 0; i < 9; ++i) r.data_mut()[i] = cam.R.m[i];
    Value delta_world = matmul(delta_cam, r);
    return add(pts, delta_world);
}

StructuredFeatures build_structured_features(const Value& featimg, const Camera& cam,
                                             std::shared_ptr<const SurfaceTemplate> tmpl,
                                             const KinematicTree& tree, const Pose& pose,
                                             const ShapeParams& shape, const SemanticCodes& codes,
                                             const DisplacementNet& net, const S3FConfig& cfg) {
    auto transforms = forward_kinematics(tree, pose, shape);
    std::vector<Vec3> v = skin_points(*tmpl, transforms);

    Value v_prime;
    if (cfg.use_displacement) {
        std::vector<uint8_t> oob0;
        Value f8 = pool_initial(featimg, cam, v, cfg, oob0);
        v_prime = displace(v, f8, codes, net, cam, cfg.d_max);
    } else {
        v_prime = Value::zeros(TensorShape::mat((int)v.size(), 3));
        auto& d = v_prime.data_mut();
        for (size_t i = 0; i < v.size(); ++i) {
            d[3 * i] = v[i].x;
            d[3 * i + 1] = v[i].y;
            d[3 * i + 2] = v[i].z;
        }
    }

    StructuredFeatures sf;
    sf.tmpl = std::move(tmpl);
    sf.positions = v_prime;
    sf.features = pool_final(featimg, cam, v_prime, cfg, sf.out_of_image);
    sf.visibility = visibility(v, pose_body(tree, pose, shape), cam);
    return sf;
}

namespace {

// Per-point blended skinning transforms for one template under a pose.
void blend_all(const SurfaceTemplate& tmpl, const std::vector<Rigid>& tf, bool inverse,
               std::vector<Mat3>& a, std::vector<Vec3>& t) {
    size_t n = tmpl.points.size();
    a.resize(n);
    t.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const SurfacePoint& sp = tmpl.points[i];
        Affine m = blend_transforms(tf, sp.bones, sp.weights);
        if (inverse) {
            if (std::abs(m.A.det()) <= 1e-8)
                throw std::runtime_error("degenerate pose: blended skinning transform is singular");
            m = m.inverse();
        }
        a[i] = m.A;
        t[i] = m.t;
    }
}

}  // namespace

StructuredFeatures repose_features(const StructuredFeatures& sf, const KinematicTree& tree,
                                   const Pose& source_pose, const ShapeParams& source_shape,
                                   const Pose& target_pose, const ShapeParams& target_shape) {
    auto src_tf = forward_kinematics(tree, source_pose, source_shape);
    auto dst_tf = forward_kinematics(tree, target_pose, target_shape);
    std::vector<Mat3> a;
    std::vector<Vec3> t;
    blend_all(*sf.tmpl, src_tf, /*inverse=*/true, a, t);
    Value canonical = affine_rows(sf.positions, a, t);
    blend_all(*sf.tmpl, dst_tf, /*inverse=*/false, a, t);

    StructuredFeatures out = sf;
    out.positions = affine_rows(canonical, a, t);
    return out;
}

StructuredFeatures aggregate_views(const std::vector<StructuredFeatures>& views,
                                   const std::vector<const KinematicTree*>& trees,
                                   const std::vector<Pose>& source_poses,
                                   const std::vector<ShapeParams>& source_shapes,
                                   const Pose& target_pose, const ShapeParams& target_shape) {
    if (views.empty()) throw std::invalid_argument("aggregate_views: no views");
    size_t tcount = views.size();
    if (trees.size() != tcount || source_poses.size() != tcount || source_shapes.size() != tcount)
        throw std::invalid_argument("aggregate_views: per-view argument count mismatch");
    const auto& tmpl = views[0].tmpl;
    int n = views[0].positions.shape().dims[0];
    for (const StructuredFeatures& v : views) {
        if (v.tmpl.get() != tmpl.get() || v.positions.shape().dims[0] != n)
            throw std::invalid_argument("aggregate_views: views do not share the template");
    }

    // Per-point softmax over views of the visibility scores.
    std::vector<std::vector<double>> w(tcount, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
        double mx = views[0].visibility[i];
        for (size_t t = 1; t < tcount; ++t) mx = std::max(mx, views[t].visibility[i]);
        double sum = 0;
        for (size_t t = 0; t < tcount; ++t) {
            w[t][i] = std::exp(views[t].visibility[i] - mx);
            sum += w[t][i];
        }
        for (size_t t = 0; t < tcount; ++t) w[t][i] /= sum;
    }

    Value pos_acc, feat_acc;
    std::vector<double> vis_acc(n, 0.0);
    std::vector<uint8_t> oob_acc(n, 1);
    std::vector<Mat3> a;
    std::vector<Vec3> t;
    for (size_t t_i = 0; t_i < tcount; ++t_i) {
        auto tf = forward_kinematics(*trees[t_i], source_poses[t_i], source_shapes[t_i]);
        blend_all(*tmpl, tf, /*inverse=*/true, a, t);
        Value canonical = affine_rows(views[t_i].positions, a, t);
        Value wv = Value::zeros(TensorShape::vec(n));
        for (int i = 0; i < n; ++i) wv.data_mut()[i] = w[t_i][i];
        Value wp = mul_rowscale(canonical, wv);
        Value wf = mul_rowscale(views[t_i].features, wv);
        pos_acc = pos_acc.defined() ? add(pos_acc, wp) : wp;
        feat_acc = feat_acc.defined() ? add(feat_acc, wf) : wf;
        for (int i = 0; i < n; ++i) {
            vis_acc[i] += w[t_i][i] * views[t_i].visibility[i];
            if (!views[t_i].out_of_image[i]) oob_acc[i] = 0;
        }
    }

    auto dst_tf = forward_kinematics(*trees[0], target_pose, target_shape);
    blend_all(*tmpl, dst_tf, /*inverse=*/false, a, t);

    StructuredFeatures out;
    out.tmpl = tmpl;
    out.positions = affine_rows(pos_acc, a, t);
    out.features = feat_acc;
    out.visibility = std::move(vis_acc);
    out.out_of_image = std::move(oob_acc);
    return out;
}

StructuredFeatures swap_features(const StructuredFeatures& sf, const Camera& cam,
                                 const Image& clothing_mask, const StructuredFeatures& donor) {
    if (donor.tmpl.get() != sf.tmpl.get())
        throw std::invalid_argument("swap_features: donor must share the template");
    int n = sf.positions.shape().dims[0];
    Value take = Value::zeros(TensorShape::vec(n));
    Value keep = Value::zeros(TensorShape::vec(n));
    const auto& p = sf.positions.data();
    for (int i = 0; i < n; ++i) {
        Projection pr = project(cam, {p[3 * i], p[3 * i + 1], p[3 * i + 2]});
        bool inside = false;
        if (pr.ok) {
            int x = (int)std::lround(pr.u), y = (int)std::lround(pr.v);
            if (x >= 0 && x < clothing_mask.width && y >= 0 && y < clothing_mask.height)
                inside = clothing_mask.at(y, x, 0) > 0.5;
        }
        take.data_mut()[i] = inside ? 1.0 : 0.0;
        keep.data_mut()[i] = inside ? 0.0 : 1.0;
    }
    StructuredFeatures out = sf;
    out.features = add(mul_rowscale(sf.features, keep), mul_rowscale(donor.features, take));
    return out;
}

}  // namespace s3f
