#pragma once

#include <string>

#include "bdcd/autograd.hpp"
#include "bdcd/mask.hpp"

namespace bdcd {

using ag::Var;

enum class LossVariant { focal_dice, focal_dice_ordinal, buildings_only_ce };

LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossVariant v);

struct LossConfig {
    std::vector<double> class_weights = {0.01, 0.1, 0.7, 0.7, 0.7};
    double alpha = 1.0;   // dice term weight
    double gamma = 2.0;   // focal exponent
    LossVariant variant = LossVariant::focal_dice;
    double ordinal_weight = 0.25;

    void validate(int num_classes) const;
};

/// One-vs-rest focal loss for one class over softmax probabilities (C,H,W);
/// p is clamped to [1e-7, 1-1e-7] before the log.
Var focal_loss(const Var& probs, const Mask& target, int class_index, double gamma);

/// Soft dice loss for one class, smoothing eps = 1.
Var dice_loss(const Var& probs, const Mask& target, int class_index);

/// Mean cross-entropy restricted to building pixels (target >= 1); 0 on
/// all-background targets.
Var buildings_only_ce(const Var& logits, const Mask& target);

/// Squared error between the expected damage level and the target level,
/// both mapped from {1..4} to [0,1], over building pixels only.
Var ordinal_loss(const Var& logits, const Mask& target);

/// The full training objective: softmax once, then the class-weighted sum of
/// focal and dice terms per class (plus the optional ordinal term), or the
/// buildings-only cross-entropy when that variant is selected.
Var combined_loss(const Var& logits, const Mask& target, const LossConfig& cfg);

}  // namespace bdcd
