#pragma once

#include "s3f/geometry.hpp"
#include "s3f/image.hpp"
#include "s3f/nn.hpp"

namespace s3f {

// Body guidance rendered from the (possibly noisy) body fit: a normal map
// mapped to [0,1] and a dense-correspondence map (canonical hit position,
// min-max normalized over the canonical body bounding box). Both are zero
// where the body ray cast misses.
struct GuidanceMaps {
    Image normal;    // HxWx3
    Image semantic;  // HxWx3
};

GuidanceMaps render_guidance(const KinematicTree& tree, const Pose& pose,
                             const ShapeParams& shape, const Camera& cam);

// (H,W,C) float image -> (C,H,W) constant Value.
nn::Value image_to_chw(const Image& img);
Image chw_to_image(const nn::Value& v);

// Input stack for the encoder: [rgb(3), mask(1), normal(3), semantic(3)].
nn::Value stack_encoder_input(const Image& rgb, const Image& mask, const GuidanceMaps& g);

struct EncoderConfig {
    int image_size = 64;   // square, power of two
    int in_channels = 10;
    int feat_dim = 32;     // output feature channels
    int illum_dim = 16;
};

// U-Net style feature extractor: 3 down / 3 up with skip connections,
// encoder widths [16,32,64], decoder widths [64,32,32], and a linear 1x1
// head. The bottleneck is globally average-pooled and mapped to the
// illumination code.
class ImageEncoder {
  public:
    ImageEncoder(nn::ParamStore& store, const EncoderConfig& cfg, Rng& rng);

    struct Output {
        nn::Value features;      // (feat_dim, H, W)
        nn::Value illumination;  // (illum_dim)
    };
    // Input must be a (in_channels, S, S) stack with S == cfg.image_size.
    Output encode(const nn::Value& input) const;

    const EncoderConfig& config() const { return cfg_; }

  private:
    EncoderConfig cfg_;
    nn::Value enc0_w, enc0_b, enc1_w, enc1_b, enc2_w, enc2_b, bott_w, bott_b;
    nn::Value dec2_w, dec2_b, dec1_w, dec1_b, dec0_w, dec0_b;
    nn::Value head_w, head_b;
    nn::Linear illum_;
};

// Bilinear feature lookup at one continuous pixel position; out-of-image
// coordinates return zeros and set the flag.
std::vector<nn::real> sample_feature(const nn::Value& featimg, double u, double v,
                                     bool* out_of_image = nullptr);

}  // namespace s3f
