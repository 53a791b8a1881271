#include "bdcd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace bdcd {

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning_rate > 0 required");
    if (scheduler_factor <= 0 || scheduler_factor >= 1)
        throw std::invalid_argument("TrainConfig: scheduler_factor must be in (0,1)");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1 required");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1 required");
    if (val_fraction < 0 || val_fraction >= 1)
        throw std::invalid_argument("TrainConfig: val_fraction must be in [0,1)");
}

std::vector<int> TrainConfig::effective_milestones() const {
    if (!scheduler_milestones.empty()) return scheduler_milestones;
    int m1 = static_cast<int>(0.60 * epochs);
    int m2 = static_cast<int>(0.85 * epochs);
    if (m2 == m1) return {m1};
    return {m1, m2};
}

void FineTuneConfig::validate() const {
    if (learning_rate <= 0)
        throw std::invalid_argument("FineTuneConfig: learning_rate > 0 required");
    if (epochs < 0) throw std::invalid_argument("FineTuneConfig: epochs >= 0 required");
    if (batch_size < 1) throw std::invalid_argument("FineTuneConfig: batch_size >= 1 required");
}

double scheduled_lr(double base_lr, const std::vector<int>& milestones, double factor, int epoch) {
    int hit = 0;
    for (int m : milestones)
        if (m <= epoch) ++hit;
    return base_lr * std::pow(factor, hit);
}

std::string TrainHistory::to_csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss,val_score,lr,seconds\n";
    char buf[160];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_score, e.lr, e.seconds);
        out << buf;
    }
    return out.str();
}

namespace {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Tensor> m, v;
    long t = 0;

    void step(nn::ParamStore& ps, double lr) {
        const auto& items = ps.items();
        if (m.empty()) {
            for (const auto& [name, p] : items) {
                m.emplace_back(p.val().shape);
                v.emplace_back(p.val().shape);
            }
        }
        ++t;
        double c1 = 1.0 - std::pow(beta1, t);
        double c2 = 1.0 - std::pow(beta2, t);
        for (size_t i = 0; i < items.size(); ++i) {
            Var p = items[i].second;
            const Tensor& g = p.grad();
            Tensor& w = p.val();
            for (size_t k = 0; k < w.v.size(); ++k) {
                double gk = g.v[k];
                m[i].v[k] = beta1 * m[i].v[k] + (1 - beta1) * gk;
                v[i].v[k] = beta2 * v[i].v[k] + (1 - beta2) * gk * gk;
                w.v[k] -= lr * (m[i].v[k] / c1) / (std::sqrt(v[i].v[k] / c2) + eps);
            }
        }
    }
};

/// One gradient-accumulation pass over a shuffled epoch; returns the mean
/// per-sample loss. Throws DivergenceError on a non-finite loss.
double run_epoch(nn::ParamStore& ps, Adam& opt, double lr, long n, int batch_size,
                 std::mt19937_64& rng, const std::function<Var(long)>& sample_loss) {
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (long start = 0; start < n; start += batch_size) {
        long end = std::min<long>(start + batch_size, n);
        ps.zero_grad();
        for (long i = start; i < end; ++i) {
            Var loss;
            try {
                loss = sample_loss(order[i]);
            } catch (const std::domain_error& e) {
                // non-finite activations surface here once weights blow up
                throw DivergenceError(std::string("training diverged: ") + e.what());
            }
            double lv = loss.val().v[0];
            if (!std::isfinite(lv))
                throw DivergenceError("training diverged: non-finite loss at sample " +
                                      std::to_string(order[i]));
            total += lv;
            ag::backward(ag::scale(loss, 1.0 / (end - start)));
        }
        opt.step(ps, lr);
    }
    return total / n;
}

double selection_metric(const EvalReport& r, int num_classes) {
    return num_classes > 2 ? r.score : r.f1_class;
}

}  // namespace

EvalReport evaluate_model(const ChangeNet& net, const std::vector<TileRecord>& tiles) {
    std::vector<std::pair<Mask, Mask>> pairs;
    for (const auto& rec : tiles) {
        Tensor pre = normalize_image(rec.pre_image.v, rec.pre_image.h, rec.pre_image.w);
        Tensor post = normalize_image(rec.post_image.v, rec.post_image.h, rec.post_image.w);
        auto [damage, loc] = predict_masks(net.forward_logits(pre, post));
        pairs.emplace_back(std::move(damage), rec.label_mask);
    }
    return evaluate(pairs, net.config().num_classes);
}

double validation_loss(const ChangeNet& net, const std::vector<TileRecord>& tiles,
                       const LossConfig& loss_cfg) {
    if (tiles.empty()) return 0;
    double total = 0;
    for (const auto& rec : tiles) {
        Var pre = Var::constant(normalize_image(rec.pre_image.v, rec.pre_image.h, rec.pre_image.w));
        Var post =
            Var::constant(normalize_image(rec.post_image.v, rec.post_image.h, rec.post_image.w));
        total += combined_loss(net.forward(pre, post), rec.label_mask, loss_cfg).val().v[0];
    }
    return total / tiles.size();
}

TrainResult train(ChangeNet& net, const std::vector<TileRecord>& train_set,
                  const std::vector<TileRecord>& val_set, const TrainConfig& cfg,
                  const LossConfig& loss_cfg) {
    cfg.validate();
    loss_cfg.validate(net.config().num_classes);
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");

    auto milestones = cfg.effective_milestones();
    Adam opt;
    std::mt19937_64 shuffle_rng(mix64(cfg.seed));
    TrainResult result;
    double best_score = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double lr = scheduled_lr(cfg.learning_rate, milestones, cfg.scheduler_factor, epoch);

        auto sample_loss = [&](long idx) {
            TileRecord rec = augment(train_set[idx],
                                     mix64(cfg.seed ^ mix64(static_cast<uint64_t>(epoch) * 7919 +
                                                            static_cast<uint64_t>(idx))),
                                     cfg.augment);
            Var pre =
                Var::constant(normalize_image(rec.pre_image.v, rec.pre_image.h, rec.pre_image.w));
            Var post = Var::constant(
                normalize_image(rec.post_image.v, rec.post_image.h, rec.post_image.w));
            return combined_loss(net.forward(pre, post), rec.label_mask, loss_cfg);
        };
        double train_loss = run_epoch(net.params(), opt, lr, train_set.size(), cfg.batch_size,
                                      shuffle_rng, sample_loss);

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss;
        st.lr = lr;
        if (!val_set.empty()) {
            st.val_loss = validation_loss(net, val_set, loss_cfg);
            EvalReport report = evaluate_model(net, val_set);
            st.val_score = selection_metric(report, net.config().num_classes);
            result.history.val_reports.push_back(report);
            if (st.val_score > best_score) {
                best_score = st.val_score;
                result.best = checkpoint_from_model(net);
            }
        }
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(st);
    }
    result.final_ = checkpoint_from_model(net);
    if (val_set.empty()) result.best = result.final_;
    return result;
}

TrainResult train(ChangeNet& net, const std::vector<TileRecord>& dataset, const TrainConfig& cfg,
                  const LossConfig& loss_cfg) {
    cfg.validate();
    auto split = stratified_split(dataset, {1.0 - cfg.val_fraction, cfg.val_fraction, 0.0},
                                  mix64(cfg.seed ^ 0x5e17u));
    return train(net, split[0], split[1], cfg, loss_cfg);
}

namespace {

/// Plain UNet for binary building segmentation. Encoder blocks share the
/// ChangeNet naming so the weights transfer by name.
struct UNetSegmenter {
    ModelConfig cfg;
    nn::ParamStore ps;
    std::vector<nn::ConvBlock> enc;
    std::vector<nn::Conv2d> up_conv, fuse_conv;
    std::vector<nn::ChannelNorm> up_norm, fuse_norm;
    nn::Conv2d head;

    UNetSegmenter(const ModelConfig& c, uint64_t seed) : cfg(c) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        const auto& ch = cfg.channels;
        for (int l = 0; l < cfg.levels; ++l)
            enc.emplace_back(ps, "encoder.block" + std::to_string(l), l == 0 ? 3 : ch[l - 1],
                             ch[l], rng);
        for (int l = cfg.levels - 2; l >= 0; --l) {
            std::string p = "seg.merge" + std::to_string(l);
            up_conv.emplace_back(ps, p + ".up", ch[l + 1], ch[l], 3, rng);
            up_norm.emplace_back(ps, p + ".up_norm", ch[l]);
            fuse_conv.emplace_back(ps, p + ".fuse", 2 * ch[l], ch[l], 3, rng);
            fuse_norm.emplace_back(ps, p + ".fuse_norm", ch[l]);
        }
        head = nn::Conv2d(ps, "seg.head", ch[0], 2, 1, rng);
    }

    Var forward(const Var& image) const {
        std::vector<Var> pyr;
        Var cur = image;
        for (int l = 0; l < cfg.levels; ++l) {
            if (l > 0) cur = ag::maxpool2(cur);
            cur = enc[l].forward(cur);
            pyr.push_back(cur);
        }
        cur = pyr.back();
        for (int i = 0, l = cfg.levels - 2; l >= 0; --l, ++i) {
            cur = ag::relu(up_norm[i].forward(up_conv[i].forward(ag::upsample_bilinear2(cur))));
            cur = ag::concat_channels(cur, pyr[l]);
            cur = ag::relu(fuse_norm[i].forward(fuse_conv[i].forward(cur)));
        }
        return head.forward(cur);
    }
};

Mask binarize(const Mask& m) {
    Mask out(m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = m.v[i] > 0 ? 1 : 0;
    return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> pretrain_segmentation_backbone(
    const std::vector<TileRecord>& tiles, const ModelConfig& cfg, const TrainConfig& tcfg,
    double post_mix_ratio) {
    tcfg.validate();
    if (tiles.empty()) throw std::invalid_argument("pretrain: empty dataset");
    if (post_mix_ratio < 0 || post_mix_ratio > 1)
        throw std::invalid_argument("pretrain: post_mix_ratio must be in [0,1]");

    UNetSegmenter seg(cfg, tcfg.seed);
    std::vector<Mask> targets;
    std::vector<double> dist(2, 0);
    for (const auto& rec : tiles) targets.push_back(binarize(rec.label_mask));
    {
        std::vector<TileRecord> binview = tiles;
        for (size_t i = 0; i < binview.size(); ++i) binview[i].label_mask = targets[i];
        dist = class_pixel_distribution(binview, 2);
    }
    LossConfig lc;
    lc.class_weights = derive_class_weights(dist);
    lc.variant = LossVariant::focal_dice;

    auto milestones = tcfg.effective_milestones();
    Adam opt;
    std::mt19937_64 shuffle_rng(mix64(tcfg.seed ^ 0xba5eu));
    std::mt19937_64 mix_rng(mix64(tcfg.seed ^ 0x5016u));
    std::bernoulli_distribution use_post(post_mix_ratio);

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        double lr = scheduled_lr(tcfg.learning_rate, milestones, tcfg.scheduler_factor, epoch);
        auto sample_loss = [&](long idx) {
            const TileRecord& rec = tiles[idx];
            const ImageU8& img =
                (post_mix_ratio > 0 && use_post(mix_rng)) ? rec.post_image : rec.pre_image;
            Var x = Var::constant(normalize_image(img.v, img.h, img.w));
            return combined_loss(seg.forward(x), targets[idx], lc);
        };
        run_epoch(seg.ps, opt, lr, tiles.size(), tcfg.batch_size, shuffle_rng, sample_loss);
    }

    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, v] : seg.ps.items())
        if (name.rfind("encoder.", 0) == 0) out.emplace_back(name, v.val());
    return out;
}

Mask merge_classes(const Mask& mask, const std::map<int, int>& class_merge_map) {
    Mask out(mask.h, mask.w);
    for (size_t i = 0; i < mask.v.size(); ++i) {
        auto it = class_merge_map.find(mask.v[i]);
        if (it == class_merge_map.end())
            throw std::invalid_argument("merge_classes: unmapped label " +
                                        std::to_string(mask.v[i]));
        out.v[i] = static_cast<uint8_t>(it->second);
    }
    return out;
}

std::map<int, int> default_damage_merge() { return {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 3}}; }

Checkpoint reshape_head_for_merge(const Checkpoint& src, const std::map<int, int>& merge_map) {
    int old_c = src.model.num_classes;
    std::set<int> new_set;
    for (int c = 0; c < old_c; ++c) {
        auto it = merge_map.find(c);
        if (it == merge_map.end())
            throw std::invalid_argument("merge map misses source class " + std::to_string(c));
        new_set.insert(it->second);
    }
    int new_c = static_cast<int>(new_set.size());
    for (int c = 0; c < new_c; ++c)
        if (!new_set.count(c))
            throw std::invalid_argument("merge map targets must be contiguous from 0");

    Checkpoint out = src;
    out.model.num_classes = new_c;
    if (new_c == old_c) return out;  // pure relabeling, weights unchanged

    for (auto& [name, t] : out.weights) {
        if (name == "decoder.head.w") {
            long cin = t.shape[1], k = t.shape[2];
            Tensor w({new_c, cin, k, k});
            std::vector<long> counts(new_c, 0);
            for (int c = 0; c < old_c; ++c) {
                int nc = merge_map.at(c);
                ++counts[nc];
                long row = cin * k * k;
                for (long i = 0; i < row; ++i) w.v[nc * row + i] += t.v[c * row + i];
            }
            long row = cin * k * k;
            for (int nc = 0; nc < new_c; ++nc)
                for (long i = 0; i < row; ++i) w.v[nc * row + i] /= counts[nc];
            t = std::move(w);
        } else if (name == "decoder.head.b") {
            Tensor b({new_c});
            std::vector<long> counts(new_c, 0);
            for (int c = 0; c < old_c; ++c) {
                int nc = merge_map.at(c);
                ++counts[nc];
                b.v[nc] += t.v[c];
            }
            for (int nc = 0; nc < new_c; ++nc) b.v[nc] /= counts[nc];
            t = std::move(b);
        }
    }
    return out;
}

std::pair<Checkpoint, TrainHistory> fine_tune(const Checkpoint& src,
                                              const std::vector<TileRecord>& target_train,
                                              const std::vector<TileRecord>& target_val,
                                              const FineTuneConfig& cfg, LossConfig loss_cfg) {
    cfg.validate();
    std::map<int, int> merge = cfg.class_merge_map;
    if (merge.empty())
        for (int c = 0; c < src.model.num_classes; ++c) merge[c] = c;

    Checkpoint reshaped = reshape_head_for_merge(src, merge);
    int new_c = reshaped.model.num_classes;

    auto merged = [&](const std::vector<TileRecord>& in) {
        std::vector<TileRecord> out = in;
        for (auto& rec : out) rec.label_mask = merge_classes(rec.label_mask, merge);
        return out;
    };
    std::vector<TileRecord> tr = merged(target_train), va = merged(target_val);

    if (!cfg.class_weights.empty())
        loss_cfg.class_weights = cfg.class_weights;
    else
        loss_cfg.class_weights = derive_class_weights(class_pixel_distribution(tr, new_c));
    loss_cfg.validate(new_c);

    if (cfg.epochs == 0) return {reshaped, TrainHistory{}};

    ChangeNet net = model_from_checkpoint(reshaped);
    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.scheduler_milestones = {cfg.epochs};  // fixed lr throughout
    tc.batch_size = cfg.batch_size;
    tc.epochs = cfg.epochs;
    tc.seed = cfg.seed;
    tc.augment.scale_jitter = true;
    tc.augment.photometric = true;
    tc.augment.hflip = true;
    tc.augment.vflip = true;

    TrainResult r = train(net, tr, va, tc, loss_cfg);
    return {va.empty() ? r.final_ : r.best, r.history};
}

std::vector<AblationRow> ablation_run(const ModelConfig& base, const LossConfig& loss_cfg,
                                      const TrainConfig& tcfg, const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<TileRecord>& train_set,
                                      const std::vector<TileRecord>& val_set) {
    std::vector<AblationRow> rows;
    for (const std::string& value : values) {
        ModelConfig m = base;
        LossConfig lc = loss_cfg;
        if (axis == "transformer_depth") {
            m.transformer_depth = std::stoi(value);
        } else if (axis == "transformer_levels") {
            m.transformer_levels.clear();
            m.transformer_levels_set = true;
            std::stringstream ss(value);
            for (std::string tok; std::getline(ss, tok, '+');)
                if (!tok.empty()) m.transformer_levels.push_back(std::stoi(tok));
        } else if (axis == "loss_variant") {
            lc.variant = loss_variant_from_string(value);
        } else if (axis == "conv_after_merge") {
            if (value != "true" && value != "false" && value != "0" && value != "1")
                throw std::invalid_argument("ablation: bad boolean value " + value);
            m.conv_after_merge = (value == "true" || value == "1");
        } else {
            throw std::invalid_argument("ablation: unknown axis " + axis);
        }
        m.validate();

        ChangeNet net(m, tcfg.seed);
        TrainResult r = train(net, train_set, val_set, tcfg, lc);
        ChangeNet best = model_from_checkpoint(r.best);
        EvalReport rep = evaluate_model(best, val_set);
        rows.push_back({value, rep.iou_macro, rep.f1_class});
    }
    return rows;
}

std::string ablation_csv(const std::string& axis, const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << axis << ",iou,f1\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", r.value.c_str(), r.iou, r.f1);
        out << buf;
    }
    return out.str();
}

}  // namespace bdcd
