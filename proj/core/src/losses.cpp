#include "bdcd/losses.hpp"

#include <cmath>

namespace bdcd {

namespace {

constexpr double kClamp = 1e-7;

void check_probs_target(const Tensor& p, const Mask& t, const char* op) {
    if (p.ndim() != 3) throw std::invalid_argument(std::string(op) + ": need (C,H,W)");
    if (p.shape[1] != t.h || p.shape[2] != t.w)
        throw std::invalid_argument(std::string(op) + ": target size mismatch");
    long c = p.shape[0];
    for (uint8_t l : t.v)
        if (l >= c) throw std::invalid_argument(std::string(op) + ": target label out of range");
}

}  // namespace

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "focal_dice") return LossVariant::focal_dice;
    if (s == "focal_dice_ordinal") return LossVariant::focal_dice_ordinal;
    if (s == "buildings_only_ce") return LossVariant::buildings_only_ce;
    throw std::invalid_argument("unknown loss variant: " + s);
}

std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::focal_dice: return "focal_dice";
        case LossVariant::focal_dice_ordinal: return "focal_dice_ordinal";
        case LossVariant::buildings_only_ce: return "buildings_only_ce";
    }
    return "?";
}

void LossConfig::validate(int num_classes) const {
    if (static_cast<int>(class_weights.size()) != num_classes)
        throw std::invalid_argument("LossConfig: class_weights length != num_classes");
    for (double w : class_weights)
        if (!std::isfinite(w) || w < 0)
            throw std::invalid_argument("LossConfig: class weights must be finite and >= 0");
    if (gamma < 0 || alpha < 0 || ordinal_weight < 0)
        throw std::invalid_argument("LossConfig: alpha, gamma, ordinal_weight must be >= 0");
}

Var focal_loss(const Var& probs, const Mask& target, int class_index, double gamma) {
    check_probs_target(probs.val(), target, "focal_loss");
    long c = probs.val().shape[0];
    if (class_index < 0 || class_index >= c)
        throw std::invalid_argument("focal_loss: invalid class_index");
    long hw = target.numel();
    const Tensor& pv = probs.val();
    double total = 0;
    for (long p = 0; p < hw; ++p) {
        double pi = pv.v[class_index * hw + p];
        double q = target.v[p] == class_index ? pi : 1.0 - pi;
        q = std::clamp(q, kClamp, 1.0 - kClamp);
        total += -std::pow(1.0 - q, gamma) * std::log(q);
    }
    Mask tgt = target;
    return ag::custom_node(
        Tensor::scalar(total / hw), {probs.node()},
        [tgt = std::move(tgt), class_index, gamma, hw](ag::Node& self) {
            const Tensor& pv = self.inputs[0]->value;
            Tensor g(pv.shape);
            double go = self.grad.v[0] / hw;
            for (long p = 0; p < hw; ++p) {
                double pi = pv.v[class_index * hw + p];
                bool pos = tgt.v[p] == class_index;
                double q = pos ? pi : 1.0 - pi;
                if (q <= kClamp || q >= 1.0 - kClamp) continue;  // clamped: flat
                double omq = 1.0 - q;
                double dldq = -std::pow(omq, gamma) / q;
                if (gamma > 0) dldq += gamma * std::pow(omq, gamma - 1.0) * std::log(q);
                g.v[class_index * hw + p] = go * dldq * (pos ? 1.0 : -1.0);
            }
            self.inputs[0]->accumulate(g);
        });
}

Var dice_loss(const Var& probs, const Mask& target, int class_index) {
    check_probs_target(probs.val(), target, "dice_loss");
    long c = probs.val().shape[0];
    if (class_index < 0 || class_index >= c)
        throw std::invalid_argument("dice_loss: invalid class_index");
    constexpr double eps = 1.0;
    long hw = target.numel();
    const Tensor& pv = probs.val();
    double inter = 0, psum = 0, tsum = 0;
    for (long p = 0; p < hw; ++p) {
        double pi = pv.v[class_index * hw + p];
        psum += pi;
        if (target.v[p] == class_index) {
            tsum += 1;
            inter += pi;
        }
    }
    double num = 2 * inter + eps, den = psum + tsum + eps;
    Mask tgt = target;
    return ag::custom_node(Tensor::scalar(1.0 - num / den), {probs.node()},
                           [tgt = std::move(tgt), class_index, hw, num, den](ag::Node& self) {
                               Tensor g(self.inputs[0]->value.shape);
                               double go = self.grad.v[0];
                               for (long p = 0; p < hw; ++p) {
                                   double t = tgt.v[p] == class_index ? 1.0 : 0.0;
                                   g.v[class_index * hw + p] =
                                       go * (num - 2.0 * t * den) / (den * den);
                               }
                               self.inputs[0]->accumulate(g);
                           });
}

namespace {

Var masked_ce_on_probs(const Var& probs, const Mask& target) {
    long hw = target.numel();
    const Tensor& pv = probs.val();
    long nb = 0;
    double total = 0;
    for (long p = 0; p < hw; ++p) {
        if (target.v[p] < 1) continue;
        ++nb;
        double q = std::clamp(pv.v[target.v[p] * hw + p], kClamp, 1.0 - kClamp);
        total += -std::log(q);
    }
    double value = nb ? total / nb : 0.0;
    Mask tgt = target;
    return ag::custom_node(Tensor::scalar(value), {probs.node()},
                           [tgt = std::move(tgt), hw, nb](ag::Node& self) {
                               if (!nb) return;
                               const Tensor& pv = self.inputs[0]->value;
                               Tensor g(pv.shape);
                               double go = self.grad.v[0] / nb;
                               for (long p = 0; p < hw; ++p) {
                                   if (tgt.v[p] < 1) continue;
                                   double q = pv.v[tgt.v[p] * hw + p];
                                   if (q <= kClamp || q >= 1.0 - kClamp) continue;
                                   g.v[tgt.v[p] * hw + p] = -go / q;
                               }
                               self.inputs[0]->accumulate(g);
                           });
}

Var ordinal_on_probs(const Var& probs, const Mask& target) {
    long c = probs.val().shape[0];
    if (c != 5) throw std::invalid_argument("ordinal_loss: requires the 5-class damage config");
    long hw = target.numel();
    const Tensor& pv = probs.val();
    long nb = 0;
    double total = 0;
    std::vector<double> expect(hw, 0.0);
    for (long p = 0; p < hw; ++p) {
        if (target.v[p] < 1) continue;
        ++nb;
        double e = 0;
        for (long ci = 1; ci < c; ++ci) e += pv.v[ci * hw + p] * (ci - 1) / 3.0;
        expect[p] = e;
        double tl = (target.v[p] - 1) / 3.0;
        total += (e - tl) * (e - tl);
    }
    double value = nb ? total / nb : 0.0;
    Mask tgt = target;
    return ag::custom_node(
        Tensor::scalar(value), {probs.node()},
        [tgt = std::move(tgt), hw, nb, c, expect = std::move(expect)](ag::Node& self) {
            if (!nb) return;
            Tensor g(self.inputs[0]->value.shape);
            double go = self.grad.v[0] / nb;
            for (long p = 0; p < hw; ++p) {
                if (tgt.v[p] < 1) continue;
                double tl = (tgt.v[p] - 1) / 3.0;
                double d = 2.0 * (expect[p] - tl);
                for (long ci = 1; ci < c; ++ci) g.v[ci * hw + p] = go * d * (ci - 1) / 3.0;
            }
            self.inputs[0]->accumulate(g);
        });
}

void check_logits(const Tensor& lv, const Mask& target) {
    check_probs_target(lv, target, "combined_loss");
    for (double x : lv.v)
        if (!std::isfinite(x)) throw std::domain_error("combined_loss: non-finite logits");
}

}  // namespace

Var buildings_only_ce(const Var& logits, const Mask& target) {
    check_logits(logits.val(), target);
    return masked_ce_on_probs(ag::channel_softmax(logits), target);
}

Var ordinal_loss(const Var& logits, const Mask& target) {
    check_logits(logits.val(), target);
    return ordinal_on_probs(ag::channel_softmax(logits), target);
}

Var combined_loss(const Var& logits, const Mask& target, const LossConfig& cfg) {
    check_logits(logits.val(), target);
    long c = logits.val().shape[0];
    cfg.validate(static_cast<int>(c));
    Var probs = ag::channel_softmax(logits);
    if (cfg.variant == LossVariant::buildings_only_ce) return masked_ce_on_probs(probs, target);

    Var total;
    for (long i = 0; i < c; ++i) {
        Var term = focal_loss(probs, target, static_cast<int>(i), cfg.gamma);
        if (cfg.alpha != 0)
            term = ag::add(term, ag::scale(dice_loss(probs, target, static_cast<int>(i)),
                                           cfg.alpha));
        term = ag::scale(term, cfg.class_weights[i]);
        total = total.defined() ? ag::add(total, term) : term;
    }
    if (cfg.variant == LossVariant::focal_dice_ordinal)
        total = ag::add(total, ag::scale(ordinal_on_probs(probs, target), cfg.ordinal_weight));
    return total;
}

}  // namespace bdcd
