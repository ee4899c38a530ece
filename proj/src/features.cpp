#include "s3f/features.hpp"

#include <cmath>
#include <stdexcept>

namespace s3f {

using nn::Value;
using nn::TensorShape;
using namespace nn::ops;

GuidanceMaps render_guidance(const KinematicTree& tree, const Pose& pose,
                             const ShapeParams& shape, const Camera& cam) {
    PosedBody body = pose_body(tree, pose, shape);
    PosedBody rest = pose_body(tree, Pose::rest(tree), shape);
    std::vector<Rigid> transforms = forward_kinematics(tree, pose, shape);
    Vec3 bb_lo, bb_hi;
    rest.aabb(bb_lo, bb_hi);
    Vec3 bb_span = bb_hi - bb_lo;

    GuidanceMaps g;
    g.normal = Image(cam.width, cam.height, 3);
    g.semantic = Image(cam.width, cam.height, 3);

    Vec3 origin = cam.origin();
    auto sdf = [&](const Vec3& p) { return body.sdf(p); };
    // Generous far bound from the posed bounding box.
    Vec3 lo, hi;
    body.aabb(lo, hi);
    double t_max = norm(hi - lo) + norm((lo + hi) * 0.5 - origin) + 1.0;

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            Vec3 dir = cam.ray_direction((double)x, (double)y);
            RayHit hit = sphere_trace(origin, dir, sdf, t_max);
            if (!hit.hit) continue;
            Vec3 n = body.sdf_gradient(hit.position);
            for (int c = 0; c < 3; ++c) g.normal.at(y, x, c) = 0.5 * (n[c] + 1.0);

            // Canonical correspondence: unpose the hit with the skinning
            // weights of its (bone, u) coordinate.
            int bone = body.nearest_bone(hit.position);
            const Capsule& cap = body.capsules[bone];
            Vec3 ab = cap.b - cap.a;
            double u = std::clamp(dot(hit.position - cap.a, ab) / norm2(ab), 0.0, 1.0);
            SurfacePoint sp;
            skinning_weights(tree, bone, u, sp.bones, sp.weights);
            Vec3 canonical = unpose_point(hit.position, sp, transforms);
            for (int c = 0; c < 3; ++c) {
                double v = bb_span[c] > 0 ? (canonical[c] - bb_lo[c]) / bb_span[c] : 0.5;
                g.semantic.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return g;
}

Value image_to_chw(const Image& img) {
    Value v = Value::zeros(TensorShape{img.channels, img.height, img.width});
    auto& d = v.data_mut();
    size_t plane = (size_t)img.height * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                d[c * plane + (size_t)y * img.width + x] = img.at(y, x, c);
    return v;
}

Image chw_to_image(const Value& v) {
    if (v.shape().rank != 3) throw std::invalid_argument("chw_to_image needs rank 3");
    int c = v.shape().dims[0], h = v.shape().dims[1], w = v.shape().dims[2];
    Image img(w, h, c);
    size_t plane = (size_t)h * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                img.at(y, x, ch) = v.data()[ch * plane + (size_t)y * w + x];
    return img;
}

Value stack_encoder_input(const Image& rgb, const Image& mask, const GuidanceMaps& g) {
    if (rgb.width != mask.width || rgb.height != mask.height)
        throw std::invalid_argument("rgb/mask size mismatch");
    Image stack(rgb.width, rgb.height, 10);
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x) {
            double m = mask.at(y, x, 0) > 0.5 ? 1.0 : 0.0;
            for (int c = 0; c < 3; ++c) stack.at(y, x, c) = rgb.at(y, x, c) * m;
            stack.at(y, x, 3) = m;
            for (int c = 0; c < 3; ++c) stack.at(y, x, 4 + c) = g.normal.at(y, x, c);
            for (int c = 0; c < 3; ++c) stack.at(y, x, 7 + c) = g.semantic.at(y, x, c);
        }
    return image_to_chw(stack);
}

namespace {

nn::Value make_conv(nn::ParamStore& store, const std::string& name, int cin, int cout, Rng& rng,
                    nn::Value& bias) {
    Value w = store.create(name + ".w", TensorShape{cout, cin, 9});
    nn::xavier_init(w, cin * 9, cout, rng);
    bias = store.create(name + ".b", TensorShape::vec(cout));
    return w;
}

Value conv_block(const Value& x, const Value& w, const Value& b) {
    return leaky_relu(conv2d_3x3(x, w, b), 0.01);
}

Value concat_channels(const Value& a, const Value& b) {
    int h = a.shape().dims[1], w = a.shape().dims[2];
    Value fa = reshape(a, TensorShape::mat(a.shape().dims[0], h * w));
    Value fb = reshape(b, TensorShape::mat(b.shape().dims[0], h * w));
    return reshape(concat_rows(fa, fb),
                   TensorShape{a.shape().dims[0] + b.shape().dims[0], h, w});
}

}  // namespace

ImageEncoder::ImageEncoder(nn::ParamStore& store, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    enc0_w = make_conv(store, "unet.enc0", cfg.in_channels, 16, rng, enc0_b);
    enc1_w = make_conv(store, "unet.enc1", 16, 32, rng, enc1_b);
    enc2_w = make_conv(store, "unet.enc2", 32, 64, rng, enc2_b);
    bott_w = make_conv(store, "unet.bott", 64, 64, rng, bott_b);
    dec2_w = make_conv(store, "unet.dec2", 64 + 64, 64, rng, dec2_b);
    dec1_w = make_conv(store, "unet.dec1", 64 + 32, 32, rng, dec1_b);
    dec0_w = make_conv(store, "unet.dec0", 32 + 16, 32, rng, dec0_b);
    head_w = store.create("unet.head.w", TensorShape::mat(cfg.feat_dim, 32));
    nn::xavier_init(head_w, 32, cfg.feat_dim, rng);
    head_b = store.create("unet.head.b", TensorShape::vec(cfg.feat_dim));
    illum_ = nn::make_linear(store, "unet.illum", 64, cfg.illum_dim, rng);
}

ImageEncoder::Output ImageEncoder::encode(const Value& input) const {
    const TensorShape& s = input.shape();
    if (s.rank != 3 || s.dims[0] != cfg_.in_channels)
        throw std::invalid_argument("encoder input must be (channels, S, S)");
    int size = s.dims[1];
    if (s.dims[2] != size) throw std::invalid_argument("encoder input must be square");
    if (size != cfg_.image_size) throw std::invalid_argument("encoder input size mismatch");
    if (size < 8 || (size & (size - 1)) != 0)
        throw std::invalid_argument("encoder input side must be a power of two >= 8");

    Value e0 = conv_block(input, enc0_w, enc0_b);              // 16 x S
    Value e1 = conv_block(avgpool2(e0), enc1_w, enc1_b);       // 32 x S/2
    Value e2 = conv_block(avgpool2(e1), enc2_w, enc2_b);       // 64 x S/4
    Value bott = conv_block(avgpool2(e2), bott_w, bott_b);     // 64 x S/8

    Output out;
    out.illumination = nn::linear(reshape(global_avgpool(bott), TensorShape::mat(1, 64)),
                                  illum_.W, illum_.b);
    out.illumination = reshape(out.illumination, TensorShape::vec(cfg_.illum_dim));

    Value d2 = conv_block(concat_channels(upsample2(bott), e2), dec2_w, dec2_b);  // 64 x S/4
    Value d1 = conv_block(concat_channels(upsample2(d2), e1), dec1_w, dec1_b);    // 32 x S/2
    Value d0 = conv_block(concat_channels(upsample2(d1), e0), dec0_w, dec0_b);    // 32 x S

    // Linear 1x1 head.
    Value flat = reshape(d0, TensorShape::mat(32, size * size));
    Value feat = add(matmul(head_w, flat), rep_cols(head_b, size * size));
    out.features = reshape(feat, TensorShape{cfg_.feat_dim, size, size});
    return out;
}

std::vector<nn::real> sample_feature(const Value& featimg, double u, double v,
                                     bool* out_of_image) {
    Value uv = Value::zeros(TensorShape::mat(1, 2));
    uv.data_mut() = {u, v};
    std::vector<uint8_t> oob;
    Value row = bilinear_sample(featimg, uv, {}, oob);
    if (out_of_image) *out_of_image = oob[0] != 0;
    return row.data();
}

}  // namespace s3f
