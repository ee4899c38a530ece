#include "s3f/pipeline.hpp"

#include <cmath>

namespace s3f {

using nn::Value;
using nn::TensorShape;
using namespace nn::ops;

std::unique_ptr<Pipeline> Pipeline::create(const Config& cfg) {
    auto p = std::unique_ptr<Pipeline>(new Pipeline());
    p->enc_cfg_.image_size = cfg.integer("image_size");
    p->enc_cfg_.feat_dim = cfg.integer("feat_dim");
    p->enc_cfg_.illum_dim = cfg.integer("illum_dim");

    p->s3f_cfg_.n_points = cfg.integer("points");
    p->s3f_cfg_.code_dim = cfg.integer("code_dim");
    p->s3f_cfg_.disp_channels = cfg.integer("disp_channels");
    p->s3f_cfg_.feat_channels = cfg.integer("feat_channels");
    p->s3f_cfg_.d_max = cfg.num("d_max");
    p->s3f_cfg_.use_displacement = cfg.flag("use_displacement");
    if (p->s3f_cfg_.disp_channels + p->s3f_cfg_.feat_channels != p->enc_cfg_.feat_dim)
        throw std::invalid_argument("disp_channels + feat_channels must equal feat_dim");

    p->field_cfg_.key_dim = cfg.integer("key_dim");
    p->field_cfg_.value_dim = p->s3f_cfg_.feat_channels;
    p->field_cfg_.head_width = cfg.integer("head_width");
    p->field_cfg_.posenc_freqs = cfg.integer("posenc_freqs");
    p->field_cfg_.ds_max = cfg.num("ds_max");
    p->field_cfg_.chunk = cfg.integer("chunk");
    p->field_cfg_.use_3nn = cfg.flag("use_3nn");
    p->field_cfg_.shading = cfg.flag("shading");

    p->render_cfg_.ray_samples = cfg.integer("ray_samples");
    p->render_cfg_.bound_pad = cfg.num("bound_pad");
    p->render_cfg_.silhouette_threshold = cfg.num("silhouette_threshold");

    p->tree_ = default_tree();
    p->tmpl_ = std::make_shared<SurfaceTemplate>(sample_surface_template(
        p->tree_, ShapeParams::unit(p->tree_), p->s3f_cfg_.n_points, cfg.seed("template_seed")));

    Rng rng(cfg.seed("init_seed"));
    p->encoder_ = std::make_unique<ImageEncoder>(p->store_, p->enc_cfg_, rng);
    p->codes_ = make_semantic_codes(p->store_, p->s3f_cfg_.n_points, p->s3f_cfg_.code_dim, rng);
    int disp_in = p->s3f_cfg_.disp_channels + p->s3f_cfg_.code_dim + 3;
    p->disp_ = make_displacement_net(p->store_, disp_in, rng);
    p->field_ = make_field_model(p->store_, p->field_cfg_, p->enc_cfg_.illum_dim, rng);

    // Sharpness beta = softplus(raw) + floor, initialized exactly at beta_init.
    double beta_init = cfg.num("beta_init");
    double y = beta_init - p->beta_floor_;
    double raw = std::log(std::expm1(y));
    p->beta_raw_ = p->store_.create("render.beta_raw", TensorShape::scalar());
    p->beta_raw_.data_mut()[0] = (double)(float)raw;
    return p;
}

Value Pipeline::beta() const { return add_const(softplus(beta_raw_), beta_floor_); }

double Pipeline::beta_value() const {
    double raw = beta_raw_.data()[0];
    return (raw > 30 ? raw : std::log1p(std::exp(raw))) + beta_floor_;
}

Pipeline::ViewForward Pipeline::forward_view(const Image& rgb, const Image& mask,
                                             const Camera& cam, const Pose& pose,
                                             const ShapeParams& shape) {
    ViewForward fwd;
    fwd.guidance = render_guidance(tree_, pose, shape, cam);
    ImageEncoder::Output enc = encoder_->encode(stack_encoder_input(rgb, mask, fwd.guidance));
    fwd.featimg = enc.features;
    fwd.illumination = enc.illumination;
    StructuredFeatures sf = build_structured_features(fwd.featimg, cam, tmpl_, tree_, pose,
                                                      shape, codes_, disp_, s3f_cfg_);
    fwd.ctx = make_field_context(field_, sf, pose_body(tree_, pose, shape));
    return fwd;
}

Pipeline::ViewForward Pipeline::forward_views(const SceneBundle& scene,
                                              const std::vector<int>& views,
                                              const Pose& target_pose) {
    if (views.empty()) throw std::invalid_argument("forward_views: no views selected");
    std::vector<StructuredFeatures> sfs;
    std::vector<const KinematicTree*> trees;
    std::vector<Pose> poses;
    std::vector<ShapeParams> shapes;
    ViewForward first;
    for (size_t i = 0; i < views.size(); ++i) {
        int v = views[i];
        ViewForward fwd = forward_view(scene.rgb[v], scene.mask[v], scene.cameras[v], scene.pose,
                                       scene.shape);
        if (i == 0) first = fwd;
        sfs.push_back(fwd.ctx.sf);
        trees.push_back(&tree_);
        poses.push_back(scene.pose);
        shapes.push_back(scene.shape);
    }
    StructuredFeatures agg =
        views.size() == 1
            ? repose_features(sfs[0], tree_, scene.pose, scene.shape, target_pose, scene.shape)
            : aggregate_views(sfs, trees, poses, shapes, target_pose, scene.shape);
    ViewForward out = first;
    out.ctx = make_field_context(field_, agg, pose_body(tree_, target_pose, scene.shape));
    return out;
}

}  // namespace s3f
