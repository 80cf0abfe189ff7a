#include "wsseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace wsseg::metrics {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (k != o.k) throw ShapeError("confusion matrix class counts differ");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  return *this;
}

ConfusionMatrix accumulate(const ConfusionMatrix& cm, const Trimap& pred,
                           const Trimap& gt, int ignore_index) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("accumulate: pred/gt dimensions differ");
  ConfusionMatrix out = cm;
  const size_t n = gt.labels.size();
  for (size_t i = 0; i < n; ++i) {
    const int g = gt.labels[i];
    if (g == ignore_index) continue;
    const int p = pred.labels[i];
    if (g >= cm.k || p >= cm.k)
      throw RangeError("label " + std::to_string(std::max(g, p)) +
                       " out of range for k=" + std::to_string(cm.k));
    out.at(g, p) += 1;
  }
  return out;
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<double> iou(static_cast<size_t>(cm.k),
                          std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < cm.k; ++c) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < cm.k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const int64_t tp = cm.at(c, c);
    const int64_t denom = row + col - tp;
    if (denom > 0)
      iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double miou(const ConfusionMatrix& cm) {
  auto iou = per_class_iou(cm);
  double sum = 0.0;
  int n = 0;
  for (double v : iou)
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  if (n == 0) throw UndefinedMetricError("mIoU undefined: no class has support");
  return sum / static_cast<double>(n);
}

double dice(const data::BinaryMask& pred, const data::BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("dice: mask dimensions differ");
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return 1.0;  // all pixels true negative
  return 2.0 * static_cast<double>(tp) / static_cast<double>((tp + fp) + (tp + fn));
}

namespace {

bool has_foreground(const Trimap& t) {
  for (uint8_t v : t.labels)
    if (v != Trimap::kBackground && v != Trimap::kIgnore) return true;
  return false;
}

data::BinaryMask foreground_mask(const Trimap& t) {
  data::BinaryMask m(t.height, t.width);
  for (size_t i = 0; i < t.labels.size(); ++i) {
    const uint8_t v = t.labels[i];
    m.data[i] = (v != Trimap::kBackground && v != Trimap::kIgnore) ? 1 : 0;
  }
  return m;
}

}  // namespace

EvalReport evaluate_split(const MaskSet& preds, const MaskSet& gts, int num_classes,
                          EvalMode mode) {
  if (preds.ids != gts.ids) throw DataError("evaluate_split: id sets differ");
  if (preds.masks.size() != preds.ids.size() || gts.masks.size() != gts.ids.size())
    throw DataError("evaluate_split: mask/id count mismatch");

  const int k = num_classes + 1;  // + background
  ConfusionMatrix cm(k);
  double dice_sum = 0.0;
  int n_used = 0;

  for (size_t i = 0; i < gts.masks.size(); ++i) {
    const Trimap& gt = gts.masks[i];
    if (mode == EvalMode::kPositiveOnly && !has_foreground(gt)) continue;
    const Trimap& pr = preds.masks[i];
    cm = accumulate(cm, pr, gt);

    // Dice on the binarized foreground; gt-ignore pixels drop out of both.
    data::BinaryMask pm = foreground_mask(pr);
    data::BinaryMask gm = foreground_mask(gt);
    for (size_t px = 0; px < gt.labels.size(); ++px)
      if (gt.labels[px] == Trimap::kIgnore) pm.data[px] = 0;
    dice_sum += dice(pm, gm);
    ++n_used;
  }
  if (n_used == 0)
    throw UndefinedMetricError("evaluate_split: no images selected by mode");

  EvalReport rep;
  rep.n_images = n_used;
  rep.per_class_iou = per_class_iou(cm);
  rep.miou_all = miou(cm);
  {
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < k; ++c) {
      double v = rep.per_class_iou[static_cast<size_t>(c)];
      if (!std::isnan(v)) {
        sum += v;
        ++n;
      }
    }
    rep.miou_positive_only = n > 0 ? sum / n : 0.0;
  }
  rep.dice_mean = dice_sum / static_cast<double>(n_used);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["miou_all"] = miou_all;
  j["miou_positive_only"] = miou_positive_only;
  j["dice_mean"] = dice_mean;
  j["n_images"] = n_images;
  nlohmann::json arr = nlohmann::json::array();
  for (double v : per_class_iou) {
    if (std::isnan(v))
      arr.push_back(nullptr);
    else
      arr.push_back(v);
  }
  j["per_class_iou"] = arr;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "metric                 value\n";
  os << "---------------------  ------\n";
  os << "mIoU (all classes)     " << miou_all << "\n";
  os << "mIoU (foreground)      " << miou_positive_only << "\n";
  os << "Dice (per-image mean)  " << dice_mean << "\n";
  os << "images                 " << n_images << "\n";
  return os.str();
}

}  // namespace wsseg::metrics
