#include "wsseg/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "wsseg/pngio.hpp"

namespace wsseg::clf {

using nn::ConvSpec;
using nn::Var;

void DropBlockConfig::validate() const {
  if (block_size < 1 || block_size % 2 == 0)
    throw ConfigError("dropblock block_size must be odd and >= 1");
  if (drop_prob < 0.0f || drop_prob > 1.0f)
    throw ConfigError("dropblock drop_prob must be in [0,1]");
}

void ClassifierSpec::validate() const {
  if (backbone_id != "toy-cnn" && backbone_id != "resnet50-like" &&
      backbone_id != "vgg16-like")
    throw ConfigError("unknown backbone_id '" + backbone_id + "'");
  if (output_stride != 8 && output_stride != 16 && output_stride != 32)
    throw ConfigError("output_stride must be 8, 16 or 32");
  if (backbone_id == "toy-cnn" && output_stride == 32)
    throw ConfigError("toy-cnn supports output_stride 8 or 16");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (head_channels < 1) throw ConfigError("head_channels must be >= 1");
  dropblock.validate();
}

// ---------------------------------------------------------------------------
// DropBlock
// ---------------------------------------------------------------------------

Tensor dropblock(const Tensor& features, const DropBlockConfig& cfg,
                 bool training, Rng& draw) {
  cfg.validate();
  if (features.dim() != 4) throw ShapeError("dropblock expects 4-d features");
  const int h = features.size(2), w = features.size(3);
  const int b = cfg.block_size;
  if (h < b || w < b) throw ConfigError("feature map smaller than block_size");
  if (!training || cfg.drop_prob == 0.0f) return features;

  const int n = features.size(0), c = features.size(1);
  const int half = b / 2;
  const double area = static_cast<double>(h) * w;
  const double valid = static_cast<double>(h - b + 1) * (w - b + 1);
  const double gamma =
      cfg.drop_prob * area / (static_cast<double>(b) * b * valid);

  Tensor out(features.shape());
  std::vector<uint8_t> keep(static_cast<size_t>(h) * w);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      std::fill(keep.begin(), keep.end(), 1);
      for (int y = half; y < h - half; ++y)
        for (int x = half; x < w - half; ++x)
          if (draw.bernoulli(gamma)) {
            for (int dy = -half; dy <= half; ++dy)
              for (int dx = -half; dx <= half; ++dx)
                keep[static_cast<size_t>(y + dy) * w + (x + dx)] = 0;
          }
      int64_t kept = 0;
      for (uint8_t k : keep) kept += k;
      const float scale =
          kept > 0 ? static_cast<float>(area / static_cast<double>(kept)) : 0.0f;
      const size_t off =
          (static_cast<size_t>(ni) * c + ci) * static_cast<size_t>(h) * w;
      for (int i = 0; i < h * w; ++i)
        out[off + i] =
            keep[static_cast<size_t>(i)] ? features[off + i] * scale : 0.0f;
    }
  return out;
}

Var dropblock(const Var& features, const DropBlockConfig& cfg, bool training,
              Rng& draw) {
  cfg.validate();
  if (!training || cfg.drop_prob == 0.0f) return features;
  // Draw the keep*scale mask once; backward is then a plain multiply.
  Tensor mask =
      dropblock(Tensor::full(features->value.shape(), 1.0f), cfg, training, draw);
  return nn::mul_mask(features, std::move(mask));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace {
constexpr int kWidthDiv = 4;  // keeps the -like backbones CPU-trainable
}

ClassifierModel::ClassifierModel(const ClassifierSpec& spec, uint64_t seed)
    : spec_(spec) {
  spec.validate();
  Rng rng(Rng::derive(seed, 0x434c4600ULL /* "CLF" */));

  auto ladder_conv = [&rng](int cin, int cout, int stride, int dilation) {
    ConvSpec cs{.stride = stride, .pad = dilation, .dilation = dilation,
                .groups = 1};
    return LadderLayer{nn::ConvBnRelu(cin, cout, 3, cs, rng), false};
  };

  int feat_ch = 0;
  if (spec.backbone_id == "toy-cnn") {
    // Four conv blocks; first block carries the extra stride for os 16.
    ladder_.push_back(ladder_conv(spec.in_channels, 16,
                                  spec.output_stride == 16 ? 2 : 1, 1));
    ladder_.push_back(ladder_conv(16, 32, 2, 1));
    ladder_.push_back(ladder_conv(32, 64, 2, 1));
    ladder_.push_back(ladder_conv(64, 64, 2, 1));
    feat_ch = 64;
  } else if (spec.backbone_id == "vgg16-like") {
    // Conv stacks (2,2,3,3,3) with pooling between; the last pools lose
    // their stride and stack 5 dilates to hold the requested output stride.
    const int widths[5] = {64 / kWidthDiv, 128 / kWidthDiv, 256 / kWidthDiv,
                           512 / kWidthDiv, 512 / kWidthDiv};
    const int stack_size[5] = {2, 2, 3, 3, 3};
    bool pool_stride2[5] = {true, true, true, true, true};
    int stack_dil[5] = {1, 1, 1, 1, 1};
    if (spec.output_stride <= 16) pool_stride2[4] = false;
    if (spec.output_stride == 8) {
      pool_stride2[3] = false;
      stack_dil[4] = 2;
    }
    int cin = spec.in_channels;
    for (int s = 0; s < 5; ++s) {
      for (int i = 0; i < stack_size[s]; ++i) {
        ladder_.push_back(ladder_conv(cin, widths[s], 1, stack_dil[s]));
        cin = widths[s];
      }
      if (pool_stride2[s]) ladder_.back().pool_after = true;
    }
    feat_ch = widths[4];
  } else {
    resnet_ = backbones::FiveStageBackbone("resnet50-like", spec.in_channels,
                                           spec.output_stride, rng.next_u64());
    use_resnet_ = true;
    feat_ch = resnet_.stage_channels().back();
  }

  // Three 3x3 convs, each followed by a ReLU, then a 1x1 score layer whose
  // global average pool is the logit vector.
  Rng hr(Rng::derive(seed, 0x48454144ULL /* "HEAD" */));
  int cin = feat_ch;
  for (int i = 0; i < 3; ++i) {
    ConvSpec cs{.stride = 1, .pad = 1, .dilation = 1, .groups = 1};
    head_.emplace_back(cin, spec.head_channels, 3, cs, /*with_bias=*/true, hr);
    cin = spec.head_channels;
  }
  score_ = nn::Conv2d(spec.head_channels, spec.num_classes, 1, ConvSpec{}, true, hr);
}

ClassifierTrace ClassifierModel::forward(const Var& input, bool training,
                                         Rng* dropblock_rng) {
  ClassifierTrace trace;
  Var cur = input;
  if (use_resnet_) {
    cur = resnet_.forward(cur, training).back();
  } else {
    for (auto& layer : ladder_) {
      cur = layer.conv.forward(cur, training);
      if (layer.pool_after) cur = nn::max_pool2d(cur, 3, 2, 1);
    }
  }
  trace.taps["backbone"] = cur;

  Rng fallback(0);
  Rng& db_rng = dropblock_rng ? *dropblock_rng : fallback;
  for (size_t i = 0; i < head_.size(); ++i) {
    cur = nn::relu(head_[i].forward(cur));
    const std::string tag = "head" + std::to_string(i + 1);
    if (training && spec_.dropblock.apply_stages.count(tag))
      cur = dropblock(cur, spec_.dropblock, training, db_rng);
    trace.taps[tag] = cur;
  }
  Var scores = score_.forward(cur);
  trace.taps["scores"] = scores;
  trace.logits = nn::global_avg_pool(scores);
  return trace;
}

nn::ParamMap ClassifierModel::params() {
  nn::ParamMap m;
  if (use_resnet_) {
    resnet_.collect(m, "backbone");
  } else {
    for (size_t i = 0; i < ladder_.size(); ++i)
      ladder_[i].conv.collect(m, "backbone.layer" + std::to_string(i));
  }
  for (size_t i = 0; i < head_.size(); ++i)
    head_[i].collect(m, "head" + std::to_string(i + 1));
  score_.collect(m, "score");
  return m;
}

ClassifierHandle build_classifier(const ClassifierSpec& spec, uint64_t seed) {
  return std::make_shared<ClassifierModel>(spec, seed);
}

// ---------------------------------------------------------------------------
// Metrics and training
// ---------------------------------------------------------------------------

double multilabel_f1(const Tensor& probabilities, const Tensor& labels,
                     double threshold) {
  if (!probabilities.same_shape(labels))
    throw ShapeError("multilabel_f1: probabilities/labels shapes differ");
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < probabilities.numel(); ++i) {
    const bool p = probabilities[i] >= threshold;
    const bool y = labels[i] >= 0.5f;
    tp += p && y;
    fp += p && !y;
    fn += !p && y;
  }
  if (2 * tp + fp + fn == 0) return 0.0;
  const double precision_den = static_cast<double>(tp + fp);
  const double recall_den = static_cast<double>(tp + fn);
  if (precision_den == 0.0 || recall_den == 0.0) return 0.0;
  const double precision = static_cast<double>(tp) / precision_den;
  const double recall = static_cast<double>(tp) / recall_den;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

const ImageF& ImageCache::get(const data::SampleRecord& rec) {
  auto it = cache_.find(rec.id);
  if (it != cache_.end()) return it->second;
  ImageU8 raw = pngio::read_image(rec.image_path);
  auto [pos, inserted] = cache_.emplace(rec.id, to_float(raw));
  return pos->second;
}

Tensor images_to_tensor(const std::vector<const ImageF*>& images, int channels) {
  if (images.empty()) throw DataError("empty image batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor t({static_cast<int>(images.size()), channels, h, w});
  for (size_t n = 0; n < images.size(); ++n) {
    const ImageF& img = *images[n];
    if (img.height != h || img.width != w)
      throw ShapeError("batch images must share dimensions");
    for (int c = 0; c < channels; ++c) {
      // Grayscale images broadcast across requested channels.
      const int src_c = img.channels == channels ? c : 0;
      const float* src = img.data.data() +
                         static_cast<size_t>(src_c) * h * w;
      float* dst = t.data() + (n * channels + static_cast<size_t>(c)) *
                                  static_cast<size_t>(h) * w;
      std::copy(src, src + static_cast<size_t>(h) * w, dst);
    }
  }
  return t;
}

namespace {

// Numerically stable BCE-with-logits; returns mean loss and writes
// d(loss)/d(logit) into grad.
double bce_with_logits(const Tensor& logits, const Tensor& targets,
                       Tensor& grad) {
  const int64_t n = logits.numel();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double y = targets[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const double sig = 1.0 / (1.0 + std::exp(-z));
    grad[i] = static_cast<float>((sig - y) / static_cast<double>(n));
  }
  return total / static_cast<double>(n);
}

}  // namespace

nn::StageCheckpoint train_classifier(ClassifierModel& model,
                                     const data::DatasetIndex& index,
                                     const ClassifierTrainConfig& cfg,
                                     uint64_t fingerprint) {
  const auto train_ids = index.split_indices(data::Split::kTrain);
  const auto val_ids = index.split_indices(data::Split::kVal);
  if (train_ids.empty()) throw TrainingError("train split is empty");
  if (val_ids.empty()) throw TrainingError("val split is empty");
  const int k = model.spec().num_classes;
  const int in_ch = model.spec().in_channels;

  ImageCache cache;
  auto params = model.params();
  auto param_vars = params.vars();
  auto optimizer = nn::make_optimizer(cfg.optim);

  std::ofstream log;
  if (!cfg.log_path.empty()) log.open(cfg.log_path);

  data::BalancedBatchStream stream(index, data::Split::kTrain, cfg.batch_size,
                                   cfg.positive_fraction, cfg.seed);

  double best_f1 = -1.0;
  nn::StageCheckpoint best;

  data::AugmentationConfig aug = cfg.aug;
  aug.output_size = cfg.input_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    stream.start_epoch(epoch);
    double epoch_loss = 0.0;
    int batches = 0;
    for (auto batch = stream.next_batch(); !batch.empty();
         batch = stream.next_batch()) {
      std::vector<ImageF> aug_images;
      Tensor targets({static_cast<int>(batch.size()), k});
      aug_images.reserve(batch.size());
      for (size_t i = 0; i < batch.size(); ++i) {
        const auto& rec = index.records[static_cast<size_t>(batch[i])];
        Rng draw(Rng::derive(cfg.seed, 0x41554731ULL /* "AUG1" */,
                             static_cast<uint64_t>(epoch) * 100000 + batches,
                             i));
        aug_images.push_back(
            data::augment(cache.get(rec), std::nullopt, aug, draw).image);
        for (int c = 0; c < k; ++c)
          targets.at(static_cast<int>(i), c) = rec.labels[static_cast<size_t>(c)];
      }
      std::vector<const ImageF*> ptrs;
      for (const auto& im : aug_images) ptrs.push_back(&im);
      Var input = nn::constant(images_to_tensor(ptrs, in_ch));

      Rng db_rng(Rng::derive(cfg.seed, 0x44425231ULL /* "DBR1" */,
                             static_cast<uint64_t>(epoch), batches));
      nn::zero_grad(param_vars);
      auto trace = model.forward(input, /*training=*/true, &db_rng);
      Tensor grad(trace.logits->value.shape());
      const double loss = bce_with_logits(trace.logits->value, targets, grad);
      if (!std::isfinite(loss))
        throw TrainingError("NaN loss at epoch " + std::to_string(epoch));
      nn::backward(trace.logits, grad);
      optimizer->step(param_vars);
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= std::max(1, batches);

    // Validation F1 on plain resized images.
    Tensor probs({static_cast<int>(val_ids.size()), k});
    Tensor labels({static_cast<int>(val_ids.size()), k});
    {
      nn::NoGradGuard ng;
      for (size_t i = 0; i < val_ids.size(); ++i) {
        const auto& rec = index.records[static_cast<size_t>(val_ids[i])];
        ImageF img = data::resize_bilinear(cache.get(rec), cfg.input_size,
                                           cfg.input_size);
        Var input = nn::constant(images_to_tensor({&img}, in_ch));
        auto trace = model.forward(input, /*training=*/false, nullptr);
        for (int c = 0; c < k; ++c) {
          const double z = trace.logits->value.at(0, c);
          probs.at(static_cast<int>(i), c) =
              static_cast<float>(1.0 / (1.0 + std::exp(-z)));
          labels.at(static_cast<int>(i), c) = rec.labels[static_cast<size_t>(c)];
        }
      }
    }
    const double f1 = multilabel_f1(probs, labels, cfg.f1_threshold);

    if (log.is_open()) {
      nlohmann::json rec;
      rec["epoch"] = epoch;
      rec["train_loss"] = epoch_loss;
      rec["val_f1"] = f1;
      log << rec.dump() << "\n";
    }
    if (f1 > best_f1) {
      best_f1 = f1;
      best = nn::snapshot("classifier", params, fingerprint, epoch, f1);
    }
  }

  // Leave the model holding its best-epoch weights.
  nn::restore(best, params);
  return best;
}

}  // namespace wsseg::clf
