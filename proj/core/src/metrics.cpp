#include "bdcd/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace bdcd {

namespace {
std::string fmt6(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}
}  // namespace

long Confusion::total() const { return std::accumulate(m.begin(), m.end(), 0L); }

Confusion& Confusion::operator+=(const Confusion& o) {
    if (num_classes != o.num_classes) throw std::invalid_argument("Confusion: class mismatch");
    for (size_t i = 0; i < m.size(); ++i) m[i] += o.m[i];
    return *this;
}

Confusion confusion_matrix(const Mask& pred, const Mask& gt, int num_classes) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("confusion_matrix: mask shape mismatch");
    Confusion c(num_classes);
    for (long i = 0; i < gt.numel(); ++i) {
        if (gt.v[i] >= num_classes || pred.v[i] >= num_classes)
            throw std::invalid_argument("confusion_matrix: label out of range");
        ++c.at(gt.v[i], pred.v[i]);
    }
    return c;
}

double class_f1(const Confusion& c, int class_index) {
    if (class_index < 0 || class_index >= c.num_classes)
        throw std::invalid_argument("class_f1: invalid index");
    long tp = c.at(class_index, class_index), fp = 0, fn = 0;
    for (int k = 0; k < c.num_classes; ++k) {
        if (k == class_index) continue;
        fp += c.at(k, class_index);
        fn += c.at(class_index, k);
    }
    long den = 2 * tp + fp + fn;
    return den ? 2.0 * tp / den : 0.0;
}

double f1_loc(const Mask& pred_loc, const Mask& gt_loc) {
    if (pred_loc.h != gt_loc.h || pred_loc.w != gt_loc.w)
        throw std::invalid_argument("f1_loc: mask shape mismatch");
    long inter = 0, px = 0, py = 0;
    for (long i = 0; i < gt_loc.numel(); ++i) {
        if (pred_loc.v[i] > 1 || gt_loc.v[i] > 1)
            throw std::invalid_argument("f1_loc: masks must be binary");
        px += pred_loc.v[i];
        py += gt_loc.v[i];
        inter += pred_loc.v[i] & gt_loc.v[i];
    }
    if (px + py == 0) return 1.0;  // vacuous agreement of empty masks
    return 2.0 * inter / (px + py);
}

double f1_loc_from_confusion(const Confusion& c) {
    long tp = 0, fp = 0, fn = 0;
    for (int r = 0; r < c.num_classes; ++r)
        for (int col = 0; col < c.num_classes; ++col) {
            if (r > 0 && col > 0) tp += c.at(r, col);
            if (r == 0 && col > 0) fp += c.at(r, col);
            if (r > 0 && col == 0) fn += c.at(r, col);
        }
    if (tp + fp + fn == 0) return 1.0;
    long den = 2 * tp + fp + fn;
    return den ? 2.0 * tp / den : 0.0;
}

double aggregate_f1(const std::vector<double>& class_f1s, AggregateMode mode) {
    if (class_f1s.empty()) throw std::invalid_argument("aggregate_f1: empty input");
    if (mode == AggregateMode::arithmetic)
        return std::accumulate(class_f1s.begin(), class_f1s.end(), 0.0) / class_f1s.size();
    double inv = 0;
    for (double f : class_f1s) {
        if (f == 0) return 0.0;
        inv += 1.0 / f;
    }
    return class_f1s.size() / inv;
}

double xview2_score(double loc, double cls) {
    if (loc < 0 || loc > 1 || cls < 0 || cls > 1)
        throw std::invalid_argument("xview2_score: inputs must be in [0,1]");
    return 0.3 * loc + 0.7 * cls;
}

double iou(const Confusion& c, int class_index) {
    if (class_index < 0 || class_index >= c.num_classes)
        throw std::invalid_argument("iou: invalid index");
    long tp = c.at(class_index, class_index), fp = 0, fn = 0;
    for (int k = 0; k < c.num_classes; ++k) {
        if (k == class_index) continue;
        fp += c.at(k, class_index);
        fn += c.at(class_index, k);
    }
    long den = tp + fp + fn;
    return den ? static_cast<double>(tp) / den : 0.0;
}

double iou_macro(const Confusion& c) {
    double sum = 0;
    int present = 0;
    for (int k = 0; k < c.num_classes; ++k) {
        long row = 0;
        for (int j = 0; j < c.num_classes; ++j) row += c.at(k, j);
        if (row > 0) {
            sum += iou(c, k);
            ++present;
        }
    }
    return present ? sum / present : 0.0;
}

EvalReport evaluate(const std::vector<std::pair<Mask, Mask>>& pred_gt, int num_classes,
                    AggregateMode binary_mode) {
    if (pred_gt.empty()) throw std::invalid_argument("evaluate: empty dataset");
    EvalReport r;
    r.confusion = Confusion(num_classes);
    for (const auto& [pred, gt] : pred_gt) r.confusion += confusion_matrix(pred, gt, num_classes);

    for (int k = 0; k < num_classes; ++k) {
        r.class_f1.push_back(class_f1(r.confusion, k));
        r.iou_per_class.push_back(iou(r.confusion, k));
    }
    r.iou_macro = iou_macro(r.confusion);
    r.f1_loc = f1_loc_from_confusion(r.confusion);
    if (num_classes > 2) {
        r.aggregate_mode = AggregateMode::harmonic;
        std::vector<double> damage(r.class_f1.begin() + 1, r.class_f1.end());
        r.f1_class = aggregate_f1(damage, AggregateMode::harmonic);
    } else {
        r.aggregate_mode = binary_mode;
        r.f1_class = aggregate_f1(r.class_f1, binary_mode);
    }
    r.score = xview2_score(r.f1_loc, r.f1_class);
    return r;
}

std::string EvalReport::to_csv() const {
    std::string s = "class,f1,iou\n";
    for (size_t k = 0; k < class_f1.size(); ++k)
        s += std::to_string(k) + "," + fmt6(class_f1[k]) + "," + fmt6(iou_per_class[k]) + "\n";
    s += "f1_loc," + fmt6(f1_loc) + ",\n";
    s += "f1_class," + fmt6(f1_class) + ",\n";
    s += "score," + fmt6(score) + ",\n";
    s += "iou_macro," + fmt6(iou_macro) + ",\n";
    return s;
}

std::string EvalReport::to_text() const {
    std::string s;
    s += "class      F1        IOU\n";
    for (size_t k = 0; k < class_f1.size(); ++k) {
        char line[96];
        std::snprintf(line, sizeof line, "%-8zu %8.6f  %8.6f\n", k, class_f1[k],
                      iou_per_class[k]);
        s += line;
    }
    s += "f1_loc    = " + fmt6(f1_loc) + "\n";
    s += "f1_class  = " + fmt6(f1_class) +
         (aggregate_mode == AggregateMode::harmonic ? "  (harmonic)\n" : "  (arithmetic)\n");
    s += "score     = " + fmt6(score) + "\n";
    s += "iou_macro = " + fmt6(iou_macro) + "\n";
    return s;
}

}  // namespace bdcd
