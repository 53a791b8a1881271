#pragma once

#include <map>
#include <utility>

#include "bdcd/mask.hpp"
#include "bdcd/nn.hpp"

namespace bdcd {

using ag::Var;

/// Architecture hyperparameters for the change/damage network.
struct ModelConfig {
    int num_classes = 5;
    int levels = 5;
    std::vector<int> channels = {32, 64, 128, 256, 512};  // finest to coarsest
    // Levels that get a transformer difference block; empty means the default
    // of every level except the finest (index 0).
    std::vector<int> transformer_levels = {};
    bool transformer_levels_set = false;
    int transformer_depth = 3;
    int attention_heads = 8;
    int token_dim = 0;  // 0: use the level's channel count
    bool conv_after_merge = false;
    bool shared_encoder = true;
    long max_tokens = 4096;  // transformers only run on grids up to this size

    void validate() const;
    std::vector<int> effective_transformer_levels() const;
    long level_token_dim(int level) const {
        return token_dim > 0 ? token_dim : channels.at(level);
    }
    int divisor() const { return 1 << (levels - 1); }
};

/// The bi-temporal network: shared UNet encoders, transformer-encoded
/// feature difference at coarse levels, hierarchical coarse-to-fine decode.
class ChangeNet {
public:
    ChangeNet(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

    /// Encoder pyramid for one normalized (3,H,W) image; level k has shape
    /// (channels[k], H/2^k, W/2^k).
    std::vector<Var> encode(const Var& image, bool post_branch = false) const;

    /// Feature-domain difference at one pyramid level. Levels without a
    /// transformer block (or depth 0, or token grids over budget) fall back
    /// to the plain elementwise |f_pre - f_post|.
    Var transformer_difference(const Var& f_pre, const Var& f_post, int level) const;

    /// Tokenized difference sequences before the decoder stage:
    /// (raw_diff_tokens, encoded_diff_tokens). Only valid on transformer levels.
    std::pair<Var, Var> difference_tokens(const Var& f_pre, const Var& f_post, int level) const;

    bool transformer_active(int level, long h, long w) const;

    Var hierarchical_decode(const std::vector<Var>& diff_pyramid) const;

    Var forward(const Var& pre, const Var& post) const;
    Tensor forward_logits(const Tensor& pre, const Tensor& post) const;

private:
    struct DiffBlock {
        nn::Linear proj, deproj;
        Var pos_rows, pos_cols;
        std::vector<nn::TransformerLayer> enc_layers, dec_layers;
        long dim = 0;
    };

    ModelConfig cfg_;
    nn::ParamStore ps_;
    std::vector<nn::ConvBlock> enc_, enc_post_;
    std::map<int, DiffBlock> diff_;
    std::vector<nn::Conv2d> up_conv_, fuse_conv_, post_conv_;
    std::vector<nn::ChannelNorm> up_norm_, fuse_norm_, post_norm_;
    nn::Conv2d head_;
};

/// Per-pixel argmax damage mask (ties go to the lower class index) and the
/// derived building-vs-background localization mask.
std::pair<Mask, Mask> predict_masks(const Tensor& logits);

/// (v/255 - 0.5)/0.5 normalization of an 8-bit HWC image into a (3,H,W) tensor.
Tensor normalize_image(const std::vector<uint8_t>& hwc, long h, long w);

}  // namespace bdcd
