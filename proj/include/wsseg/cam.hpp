#pragma once

#include <map>
#include <string>
#include <vector>

#include "wsseg/classifier.hpp"
#include "wsseg/dataset.hpp"

namespace wsseg::cam {

// Per-class spatial confidence grid in [0,1] at feature resolution,
// bilinearly upsampled only at consumption time.
struct ActivationMap {
  int class_id = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major, [0,1]
  int source_h = 0;           // resolution of the image the map came from
  int source_w = 0;
  std::string image_id;

  float& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

// Normalizes in place to [0,1] by the max; an all-zero (or all-negative,
// already rectified) map stays all-zero. Idempotent.
void normalize_by_max(ActivationMap& map);

ActivationMap upsample(const ActivationMap& map, int out_h, int out_w);

// Channel weights = spatial mean of d(logit)/d(feature channel); the map is
// the rectified weighted channel sum, normalized by its max.
ActivationMap grad_cam(clf::ClassifierModel& model, const ImageF& image,
                       int class_id, const std::string& layer);

// Per-location alphas from second/third gradient powers of the
// exponentiated score; alphas are normalized per channel by their spatial
// sum (the released reference construction), so a spatially constant
// gradient collapses them to a uniform average and the result matches
// grad_cam. Channel weight = sum of alpha * rectified gradient.
ActivationMap grad_cam_pp(clf::ClassifierModel& model, const ImageF& image,
                          int class_id, const std::string& layer);

// ---------------------------------------------------------------------------
// Map store: one compressed array file per image id + a JSON index.
// ---------------------------------------------------------------------------

class MapStore {
 public:
  explicit MapStore(const std::string& dir);

  void put(const std::string& image_id, const std::vector<ActivationMap>& maps);
  std::vector<ActivationMap> get(const std::string& image_id) const;
  bool contains(const std::string& image_id) const;
  std::vector<std::string> ids() const;
  // {image_id -> [class_ids]} persisted alongside the arrays.
  void flush_index() const;

 private:
  std::string dir_;
  std::map<std::string, std::vector<int>> index_;
};

enum class CamMethod { kGradCam, kGradCamPp };

CamMethod parse_cam_method(const std::string& name);

struct ExtractSummary {
  int images_processed = 0;
  int maps_written = 0;
  std::vector<std::string> failures;  // per-item I/O failures, run continues
};

// One map per image-level-present class; all-negative images store nothing.
ExtractSummary extract_maps(clf::ClassifierModel& model,
                            const data::DatasetIndex& index,
                            const std::vector<data::Split>& splits,
                            CamMethod method, const std::string& layer,
                            int input_size, MapStore& store);

}  // namespace wsseg::cam
