#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsseg/dataset.hpp"
#include "wsseg/errors.hpp"
#include "wsseg/trimap.hpp"

namespace wsseg::metrics {

// k x k pixel-count grid, rows = ground truth, cols = prediction. Class 0 is
// background; foreground classes follow. Counts are exact integers; all
// derived scores are computed in double.
struct ConfusionMatrix {
  int k = 0;
  std::vector<int64_t> counts;  // row-major k*k

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes)
      : k(classes), counts(static_cast<size_t>(classes) * classes, 0) {}

  int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * k + pred]; }
  int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * k + pred]; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

// Value-semantic accumulation: returns an updated copy, leaving `cm` intact.
// Labels must be < k or equal to ignore_index; ignore pixels (in gt) are
// skipped entirely.
ConfusionMatrix accumulate(const ConfusionMatrix& cm, const Trimap& pred,
                           const Trimap& gt, int ignore_index = Trimap::kIgnore);

// Per-class IoU = diag / (row sum + col sum - diag). Classes whose
// denominator is zero (absent from both pred and gt) are excluded from the
// mean; if every class is excluded the metric is undefined.
double miou(const ConfusionMatrix& cm);
std::vector<double> per_class_iou(const ConfusionMatrix& cm);  // NaN where undefined

// Dice = 2 TP / ((TP+FP) + (TP+FN)); both-empty masks score exactly 1.
double dice(const data::BinaryMask& pred, const data::BinaryMask& gt);

enum class EvalMode { kAll, kPositiveOnly };

struct EvalReport {
  double miou_all = 0.0;            // mean IoU over background + foreground classes
  double miou_positive_only = 0.0;  // mean IoU over foreground classes only
  double dice_mean = 0.0;           // per-image Dice, averaged
  std::vector<double> per_class_iou;
  int n_images = 0;

  std::string to_json() const;
  std::string to_table() const;
};

struct MaskSet {
  std::vector<std::string> ids;
  std::vector<Trimap> masks;  // gt masks may contain ignore pixels
};

// mode=kPositiveOnly restricts scoring to images whose ground truth has at
// least one foreground pixel; mode=kAll keeps healthy cases (the Dice
// all-true-negative rule then applies per image). mIoU is pooled over one
// dataset-level confusion matrix; Dice is averaged per image.
EvalReport evaluate_split(const MaskSet& preds, const MaskSet& gts, int num_classes,
                          EvalMode mode);

}  // namespace wsseg::metrics
