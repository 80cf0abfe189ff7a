#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>

#include "wsseg/backbones.hpp"
#include "wsseg/dataset.hpp"
#include "wsseg/nn/checkpoint.hpp"
#include "wsseg/nn/layers.hpp"
#include "wsseg/nn/optim.hpp"

namespace wsseg::clf {

struct DropBlockConfig {
  int block_size = 3;  // odd
  float drop_prob = 0.0f;
  std::set<std::string> apply_stages = {"head3"};

  void validate() const;
};

struct ClassifierSpec {
  std::string backbone_id = "toy-cnn";  // toy-cnn | resnet50-like | vgg16-like
  int num_classes = 1;
  int output_stride = 8;  // 8 | 16 | 32
  int head_channels = 32;
  int in_channels = 1;
  DropBlockConfig dropblock;

  void validate() const;
};

// Structured dropout: zeroes block_size x block_size squares seeded by a
// Bernoulli(gamma) draw over the valid interior of each feature plane, then
// rescales survivors by total/kept. gamma = drop_prob * A / (block^2 *
// A_valid) so the expected dropped fraction tracks drop_prob. Identity when
// training is off or drop_prob == 0.
Tensor dropblock(const Tensor& features, const DropBlockConfig& cfg,
                 bool training, Rng& draw);
nn::Var dropblock(const nn::Var& features, const DropBlockConfig& cfg,
                  bool training, Rng& draw);

// Forward trace: logits plus the tagged intermediate layers CAM extraction
// hooks into ("backbone", "head1".."head3", "scores").
struct ClassifierTrace {
  nn::Var logits;  // [N, k]
  std::map<std::string, nn::Var> taps;
};

class ClassifierModel {
 public:
  ClassifierModel(const ClassifierSpec& spec, uint64_t seed);

  ClassifierTrace forward(const nn::Var& input, bool training, Rng* dropblock_rng);
  nn::ParamMap params();
  const ClassifierSpec& spec() const { return spec_; }

 private:
  struct LadderLayer {
    nn::ConvBnRelu conv;
    bool pool_after = false;  // k3 s2 p1 max pool
  };
  ClassifierSpec spec_;
  std::vector<LadderLayer> ladder_;           // toy-cnn, vgg16-like
  backbones::FiveStageBackbone resnet_;       // resnet50-like
  bool use_resnet_ = false;
  std::vector<nn::Conv2d> head_;  // three convs, each followed by ReLU
  nn::Conv2d score_;              // 1x1 to k channels, then GAP to logits
};

using ClassifierHandle = std::shared_ptr<ClassifierModel>;

ClassifierHandle build_classifier(const ClassifierSpec& spec, uint64_t seed = 1);

// Micro-averaged F1 over all sample-class pairs after thresholding.
// probabilities, labels: [N, k]. Zero denominator -> 0.
double multilabel_f1(const Tensor& probabilities, const Tensor& labels,
                     double threshold);

struct ClassifierTrainConfig {
  int epochs = 12;
  int batch_size = 16;
  double positive_fraction = 0.5;
  int input_size = 64;
  double f1_threshold = 0.5;
  nn::OptimConfig optim{.method = "adam", .lr = 1e-3, .weight_decay = 1e-5};
  data::AugmentationConfig aug;
  uint64_t seed = 7;
  std::string log_path;  // JSON-lines training log, one record per epoch
};

// Minimizes mean per-class BCE on image-level labels; returns the weights of
// the epoch with the best validation multilabel F1.
nn::StageCheckpoint train_classifier(ClassifierModel& model,
                                     const data::DatasetIndex& index,
                                     const ClassifierTrainConfig& cfg,
                                     uint64_t fingerprint);

// Shared helpers for the training loops.
class ImageCache {
 public:
  const ImageF& get(const data::SampleRecord& rec);

 private:
  std::map<std::string, ImageF> cache_;
};

Tensor images_to_tensor(const std::vector<const ImageF*>& images, int channels);

}  // namespace wsseg::clf
