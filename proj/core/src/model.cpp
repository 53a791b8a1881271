#include "bdcd/model.hpp"

#include <algorithm>
#include <cmath>

namespace bdcd {

void ModelConfig::validate() const {
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes >= 2 required");
    if (levels < 3) throw std::invalid_argument("ModelConfig: levels >= 3 required");
    if (static_cast<int>(channels.size()) != levels)
        throw std::invalid_argument("ModelConfig: channels must have one entry per level");
    for (int c : channels)
        if (c <= 0) throw std::invalid_argument("ModelConfig: channels must be positive");
    if (transformer_depth < 0)
        throw std::invalid_argument("ModelConfig: transformer_depth >= 0 required");
    if (attention_heads < 1)
        throw std::invalid_argument("ModelConfig: attention_heads >= 1 required");
    for (int l : effective_transformer_levels()) {
        if (l == 0)
            throw std::invalid_argument("ModelConfig: finest level cannot carry a transformer");
        if (l < 0 || l >= levels)
            throw std::invalid_argument("ModelConfig: transformer level out of range");
        if (level_token_dim(l) % attention_heads != 0)
            throw std::invalid_argument("ModelConfig: heads must divide token dim at level " +
                                        std::to_string(l));
    }
}

std::vector<int> ModelConfig::effective_transformer_levels() const {
    if (transformer_levels_set) return transformer_levels;
    std::vector<int> all;
    for (int l = 1; l < levels; ++l) all.push_back(l);
    return all;
}

namespace {
constexpr long kMaxGrid = 64;  // extent of the learned row/col position tables
}

ChangeNet::ChangeNet(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto& ch = cfg_.channels;

    for (int l = 0; l < cfg_.levels; ++l)
        enc_.emplace_back(ps_, "encoder.block" + std::to_string(l), l == 0 ? 3 : ch[l - 1], ch[l],
                          rng);
    if (!cfg_.shared_encoder)
        for (int l = 0; l < cfg_.levels; ++l)
            enc_post_.emplace_back(ps_, "encoder_post.block" + std::to_string(l),
                                   l == 0 ? 3 : ch[l - 1], ch[l], rng);

    if (cfg_.transformer_depth > 0)
        for (int l : cfg_.effective_transformer_levels()) {
            DiffBlock blk;
            blk.dim = cfg_.level_token_dim(l);
            std::string p = "diff.level" + std::to_string(l);
            blk.proj = nn::Linear(ps_, p + ".proj", ch[l], blk.dim, rng);
            Tensor rows({kMaxGrid, blk.dim}), cols({kMaxGrid, blk.dim});
            uniform_init(rows, 0.02, rng);
            uniform_init(cols, 0.02, rng);
            blk.pos_rows = ps_.add(p + ".pos_rows", std::move(rows));
            blk.pos_cols = ps_.add(p + ".pos_cols", std::move(cols));
            for (int d = 0; d < cfg_.transformer_depth; ++d)
                blk.enc_layers.emplace_back(ps_, p + ".enc" + std::to_string(d), blk.dim,
                                            cfg_.attention_heads, false, rng);
            for (int d = 0; d < cfg_.transformer_depth; ++d)
                blk.dec_layers.emplace_back(ps_, p + ".dec" + std::to_string(d), blk.dim,
                                            cfg_.attention_heads, true, rng);
            blk.deproj = nn::Linear(ps_, p + ".deproj", blk.dim, ch[l], rng);
            diff_.emplace(l, std::move(blk));
        }

    for (int l = cfg_.levels - 2; l >= 0; --l) {
        std::string p = "decoder.merge" + std::to_string(l);
        up_conv_.emplace_back(ps_, p + ".up", ch[l + 1], ch[l], 3, rng);
        up_norm_.emplace_back(ps_, p + ".up_norm", ch[l]);
        fuse_conv_.emplace_back(ps_, p + ".fuse", 2 * ch[l], ch[l], 3, rng);
        fuse_norm_.emplace_back(ps_, p + ".fuse_norm", ch[l]);
        if (cfg_.conv_after_merge) {
            post_conv_.emplace_back(ps_, p + ".post", ch[l], ch[l], 3, rng);
            post_norm_.emplace_back(ps_, p + ".post_norm", ch[l]);
        }
    }
    head_ = nn::Conv2d(ps_, "decoder.head", ch[0], cfg_.num_classes, 1, rng);
}

std::vector<Var> ChangeNet::encode(const Var& image, bool post_branch) const {
    const Tensor& x = image.val();
    if (x.ndim() != 3 || x.shape[0] != 3)
        throw std::invalid_argument("encode: expected (3,H,W) input, got " + x.shape_str());
    long div = cfg_.divisor();
    if (x.shape[1] % div || x.shape[2] % div)
        throw std::invalid_argument("encode: input " + x.shape_str() +
                                    " not divisible by 2^(levels-1)=" + std::to_string(div));
    const auto& blocks = (post_branch && !cfg_.shared_encoder) ? enc_post_ : enc_;
    std::vector<Var> pyr;
    Var cur = image;
    for (int l = 0; l < cfg_.levels; ++l) {
        if (l > 0) cur = ag::maxpool2(cur);
        cur = blocks[l].forward(cur);
        pyr.push_back(cur);
    }
    return pyr;
}

bool ChangeNet::transformer_active(int level, long h, long w) const {
    if (cfg_.transformer_depth == 0) return false;
    auto lv = cfg_.effective_transformer_levels();
    if (std::find(lv.begin(), lv.end(), level) == lv.end()) return false;
    return h * w <= cfg_.max_tokens && h <= kMaxGrid && w <= kMaxGrid;
}

std::pair<Var, Var> ChangeNet::difference_tokens(const Var& f_pre, const Var& f_post,
                                                 int level) const {
    const DiffBlock& blk = diff_.at(level);
    long h = f_pre.val().shape[1], w = f_pre.val().shape[2];
    Var pos = ag::pos_embed_2d(blk.pos_rows, blk.pos_cols, h, w);
    auto tokenize = [&](const Var& f) {
        return ag::add(blk.proj.forward(ag::chw_to_tokens(f)), pos);
    };
    Var t_pre = tokenize(f_pre);
    Var t_post = tokenize(f_post);
    Var e_pre = t_pre, e_post = t_post;
    for (const auto& layer : blk.enc_layers) {
        e_pre = layer.forward(e_pre);
        e_post = layer.forward(e_post);
    }
    Var raw_diff = ag::abs(ag::sub(t_pre, t_post));
    Var enc_diff = ag::abs(ag::sub(e_pre, e_post));
    return {raw_diff, enc_diff};
}

Var ChangeNet::transformer_difference(const Var& f_pre, const Var& f_post, int level) const {
    if (!f_pre.val().same_shape(f_post.val()))
        throw std::invalid_argument("transformer_difference: pre/post shape mismatch");
    long c = f_pre.val().shape[0], h = f_pre.val().shape[1], w = f_pre.val().shape[2];
    if (!transformer_active(level, h, w)) return ag::abs(ag::sub(f_pre, f_post));

    const DiffBlock& blk = diff_.at(level);
    auto [raw_diff, enc_diff] = difference_tokens(f_pre, f_post, level);
    Var q = raw_diff;  // original-token queries reconstructing spatial layout
    for (const auto& layer : blk.dec_layers) q = layer.forward(q, enc_diff);
    return ag::tokens_to_chw(blk.deproj.forward(q), c, h, w);
}

Var ChangeNet::hierarchical_decode(const std::vector<Var>& diff_pyramid) const {
    if (static_cast<int>(diff_pyramid.size()) != cfg_.levels)
        throw std::invalid_argument("hierarchical_decode: pyramid/config level mismatch");
    for (int l = 0; l < cfg_.levels; ++l) {
        const Tensor& t = diff_pyramid[l].val();
        if (t.ndim() != 3 || t.shape[0] != cfg_.channels[l])
            throw std::invalid_argument("hierarchical_decode: bad channels at level " +
                                        std::to_string(l));
        if (l > 0 && (t.shape[1] * 2 != diff_pyramid[l - 1].val().shape[1] ||
                      t.shape[2] * 2 != diff_pyramid[l - 1].val().shape[2]))
            throw std::invalid_argument("hierarchical_decode: pyramid spatial sizes inconsistent");
    }
    Var cur = diff_pyramid.back();
    for (int i = 0, l = cfg_.levels - 2; l >= 0; --l, ++i) {
        cur = ag::relu(up_norm_[i].forward(up_conv_[i].forward(ag::upsample_bilinear2(cur))));
        cur = ag::concat_channels(cur, diff_pyramid[l]);
        cur = ag::relu(fuse_norm_[i].forward(fuse_conv_[i].forward(cur)));
        if (cfg_.conv_after_merge)
            cur = ag::relu(post_norm_[i].forward(post_conv_[i].forward(cur)));
    }
    return head_.forward(cur);
}

Var ChangeNet::forward(const Var& pre, const Var& post) const {
    if (!pre.val().same_shape(post.val()))
        throw std::invalid_argument("forward: pre/post shape mismatch");
    auto pyr_pre = encode(pre, false);
    auto pyr_post = encode(post, true);
    std::vector<Var> diffs;
    for (int l = 0; l < cfg_.levels; ++l)
        diffs.push_back(transformer_difference(pyr_pre[l], pyr_post[l], l));
    return hierarchical_decode(diffs);
}

Tensor ChangeNet::forward_logits(const Tensor& pre, const Tensor& post) const {
    return forward(Var::constant(pre), Var::constant(post)).val();
}

std::pair<Mask, Mask> predict_masks(const Tensor& logits) {
    if (logits.ndim() != 3) throw std::invalid_argument("predict_masks: need (C,H,W)");
    long c = logits.shape[0], h = logits.shape[1], w = logits.shape[2];
    long hw = h * w;
    Mask damage(h, w), loc(h, w);
    for (long p = 0; p < hw; ++p) {
        int best = 0;
        double bv = logits.v[p];
        for (long ci = 1; ci < c; ++ci)
            if (logits.v[ci * hw + p] > bv) {  // strict: ties keep the lower index
                bv = logits.v[ci * hw + p];
                best = static_cast<int>(ci);
            }
        damage.v[p] = static_cast<uint8_t>(best);
        loc.v[p] = best > 0 ? 1 : 0;
    }
    return {damage, loc};
}

Tensor normalize_image(const std::vector<uint8_t>& hwc, long h, long w) {
    if (static_cast<long>(hwc.size()) != h * w * 3)
        throw std::invalid_argument("normalize_image: size mismatch");
    Tensor out({3, h, w});
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long c = 0; c < 3; ++c)
                out.v[(c * h + y) * w + x] = (hwc[(y * w + x) * 3 + c] / 255.0 - 0.5) / 0.5;
    return out;
}

}  // namespace bdcd
