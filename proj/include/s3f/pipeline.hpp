#pragma once

#include <memory>

#include "s3f/config.hpp"
#include "s3f/features.hpp"
#include "s3f/render.hpp"
#include "s3f/scene.hpp"

namespace s3f {

// The full model: image encoder, semantic codes, displacement net, the two
// attention field heads, the shading net and the density sharpness. Owns the
// body template the structured features anchor to.
class Pipeline {
  public:
    static std::unique_ptr<Pipeline> create(const Config& cfg);

    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    nn::ParamStore& store() { return store_; }
    const KinematicTree& tree() const { return tree_; }
    std::shared_ptr<const SurfaceTemplate> surface_template() const { return tmpl_; }
    const EncoderConfig& encoder_config() const { return enc_cfg_; }
    const S3FConfig& s3f_config() const { return s3f_cfg_; }
    const FieldModel& field() const { return field_; }
    const RenderConfig& render_config() const { return render_cfg_; }
    const SemanticCodes& codes() const { return codes_; }
    const DisplacementNet& displacement() const { return disp_; }

    // softplus(beta_raw) + floor; a fresh Value per call (records on the
    // active tape so beta trains).
    nn::Value beta() const;
    double beta_value() const;
    nn::Value beta_raw() { return beta_raw_; }

    // One observation through encoder + S3F construction; `pose/shape` are
    // the body parameters in use (fitted ones for the real branch).
    struct ViewForward {
        GuidanceMaps guidance;
        nn::Value featimg;
        nn::Value illumination;
        FieldContext ctx;
    };
    ViewForward forward_view(const Image& rgb, const Image& mask, const Camera& cam,
                             const Pose& pose, const ShapeParams& shape);

    // Multi-view forward: per-view S3F construction, canonical aggregation,
    // re-posed to `target_pose`. The illumination code of view 0 is used.
    ViewForward forward_views(const SceneBundle& scene, const std::vector<int>& views,
                              const Pose& target_pose);

    void save(const std::string& path) const { store_.save(path); }
    void load(const std::string& path) { store_.load(path); }

  private:
    Pipeline() = default;

    EncoderConfig enc_cfg_;
    S3FConfig s3f_cfg_;
    FieldConfig field_cfg_;
    RenderConfig render_cfg_;
    double beta_floor_ = 1e-4;

    KinematicTree tree_;
    std::shared_ptr<const SurfaceTemplate> tmpl_;
    nn::ParamStore store_;
    std::unique_ptr<ImageEncoder> encoder_;
    SemanticCodes codes_;
    DisplacementNet disp_;
    FieldModel field_;
    nn::Value beta_raw_;
};

}  // namespace s3f
