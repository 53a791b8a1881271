#pragma once

#include <string>
#include <vector>

#include "bdcd/mask.hpp"

namespace bdcd {

enum class AggregateMode { harmonic, arithmetic };

/// Confusion matrix with rows = ground truth, columns = prediction,
/// stored row-major as C*C counts.
struct Confusion {
    int num_classes = 0;
    std::vector<long> m;

    Confusion() = default;
    explicit Confusion(int c) : num_classes(c), m(static_cast<size_t>(c) * c, 0) {}
    long& at(int gt, int pred) { return m[gt * num_classes + pred]; }
    long at(int gt, int pred) const { return m[gt * num_classes + pred]; }
    long total() const;
    Confusion& operator+=(const Confusion& o);
};

struct EvalReport {
    Confusion confusion;
    std::vector<double> class_f1;
    std::vector<double> iou_per_class;
    double iou_macro = 0;
    double f1_loc = 0;
    double f1_class = 0;
    double score = 0;
    AggregateMode aggregate_mode = AggregateMode::harmonic;

    std::string to_csv() const;
    std::string to_text() const;
};

Confusion confusion_matrix(const Mask& pred, const Mask& gt, int num_classes);

/// 2TP/(2TP+FP+FN); 0 when the denominator is 0.
double class_f1(const Confusion& c, int class_index);

/// Dice/F1 of the building class of two binary masks; 1 when both are empty.
double f1_loc(const Mask& pred_loc, const Mask& gt_loc);

/// Same quantity read off an accumulated multi-class confusion matrix
/// (building = any class > 0).
double f1_loc_from_confusion(const Confusion& c);

/// harmonic: n / sum(1/f), 0 if any input is 0; arithmetic: plain mean.
double aggregate_f1(const std::vector<double>& class_f1s, AggregateMode mode);

/// 0.3 * f1_loc + 0.7 * f1_class.
double xview2_score(double f1_loc, double f1_class);

double iou(const Confusion& c, int class_index);
/// Mean IOU over classes present in the ground truth.
double iou_macro(const Confusion& c);

/// Accumulate one confusion matrix over aligned (pred, gt) mask pairs and
/// derive every report field. Damage configs (C > 2) aggregate classes
/// 1..C-1 harmonically; binary configs use both classes with `binary_mode`.
EvalReport evaluate(const std::vector<std::pair<Mask, Mask>>& pred_gt, int num_classes,
                    AggregateMode binary_mode = AggregateMode::arithmetic);

}  // namespace bdcd
