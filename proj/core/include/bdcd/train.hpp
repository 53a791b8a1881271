#pragma once

#include <map>

#include "bdcd/checkpoint.hpp"
#include "bdcd/data.hpp"
#include "bdcd/losses.hpp"
#include "bdcd/metrics.hpp"

namespace bdcd {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::vector<int> scheduler_milestones;  // empty: 60% and 85% of epochs
    double scheduler_factor = 0.6;
    int batch_size = 8;
    int epochs = 50;
    double val_fraction = 0.10;
    uint64_t seed = 0;
    AugmentToggles augment;

    void validate() const;
    std::vector<int> effective_milestones() const;
};

struct FineTuneConfig {
    int epochs = 10;
    double learning_rate = 1e-6;
    std::map<int, int> class_merge_map;     // empty: identity
    std::vector<double> class_weights;      // empty: derive from target distribution
    int batch_size = 4;
    uint64_t seed = 0;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_score = 0;
    double lr = 0;
    double seconds = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::vector<EvalReport> val_reports;

    /// epoch,train_loss,val_loss,val_score,lr,seconds
    std::string to_csv() const;
};

struct TrainResult {
    Checkpoint best;    // highest validation selection metric
    Checkpoint final_;  // last epoch
    TrainHistory history;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// base_lr * factor^(number of milestones <= epoch)
double scheduled_lr(double base_lr, const std::vector<int>& milestones, double factor, int epoch);

/// Adam optimization of combined_loss with the multi-step schedule. The
/// selection metric is the xview2 score for damage configs and the
/// aggregated F1 for binary configs.
TrainResult train(ChangeNet& net, const std::vector<TileRecord>& train_set,
                  const std::vector<TileRecord>& val_set, const TrainConfig& cfg,
                  const LossConfig& loss_cfg);

/// Convenience overload: stratified val_fraction holdout, then train.
TrainResult train(ChangeNet& net, const std::vector<TileRecord>& dataset, const TrainConfig& cfg,
                  const LossConfig& loss_cfg);

/// Plain-UNet binary building segmentation on pre-disaster images, with
/// post-disaster images mixed in at `post_mix_ratio`. Returns the trained
/// encoder weights ("encoder.*"), loadable into a ChangeNet.
std::vector<std::pair<std::string, Tensor>> pretrain_segmentation_backbone(
    const std::vector<TileRecord>& tiles, const ModelConfig& cfg, const TrainConfig& tcfg,
    double post_mix_ratio = 0.2);

/// Per-pixel relabeling; throws on labels missing from the map.
Mask merge_classes(const Mask& mask, const std::map<int, int>& class_merge_map);

/// {0->0,1->1,2->2,3->3,4->4 merged as 4->3}: the 4-class fine-tuning merge.
std::map<int, int> default_damage_merge();

/// Reshape a checkpoint's classification head for a merged class set:
/// kept classes keep their rows, merged classes' rows are averaged.
Checkpoint reshape_head_for_merge(const Checkpoint& src, const std::map<int, int>& merge_map);

/// Whole-network fine-tuning at a fixed low learning rate with the merge
/// applied to the target labels and aggressive scale/photometric
/// augmentation. Class weights default to derive_class_weights on the merged
/// target distribution.
std::pair<Checkpoint, TrainHistory> fine_tune(const Checkpoint& src,
                                              const std::vector<TileRecord>& target_train,
                                              const std::vector<TileRecord>& target_val,
                                              const FineTuneConfig& cfg, LossConfig loss_cfg);

/// Run inference over tiles and score against their labels.
EvalReport evaluate_model(const ChangeNet& net, const std::vector<TileRecord>& tiles);

double validation_loss(const ChangeNet& net, const std::vector<TileRecord>& tiles,
                       const LossConfig& loss_cfg);

struct AblationRow {
    std::string value;
    double iou = 0;
    double f1 = 0;
};

/// Train one model per axis value under identical seeds and budgets.
/// axis: transformer_depth | transformer_levels | loss_variant | conv_after_merge
std::vector<AblationRow> ablation_run(const ModelConfig& base, const LossConfig& loss_cfg,
                                      const TrainConfig& tcfg, const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<TileRecord>& train_set,
                                      const std::vector<TileRecord>& val_set);

std::string ablation_csv(const std::string& axis, const std::vector<AblationRow>& rows);

}  // namespace bdcd
