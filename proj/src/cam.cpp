#include "wsseg/cam.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "wsseg/pngio.hpp"

namespace wsseg::cam {

namespace fs = std::filesystem;

void normalize_by_max(ActivationMap& map) {
  float mx = 0.0f;
  for (float v : map.values) mx = std::max(mx, v);
  if (mx <= 0.0f) {
    std::fill(map.values.begin(), map.values.end(), 0.0f);
    return;
  }
  for (float& v : map.values) v = std::max(0.0f, v) / mx;
}

ActivationMap upsample(const ActivationMap& map, int out_h, int out_w) {
  ActivationMap out = map;
  out.height = out_h;
  out.width = out_w;
  out.values.assign(static_cast<size_t>(out_h) * out_w, 0.0f);
  // Reuse the image-path bilinear resampler.
  ImageF tmp(map.height, map.width, 1);
  std::copy(map.values.begin(), map.values.end(), tmp.data.begin());
  ImageF up = data::resize_bilinear(tmp, out_h, out_w);
  std::copy(up.data.begin(), up.data.end(), out.values.begin());
  return out;
}

namespace {

struct TapGrads {
  Tensor activations;  // [C, h, w] (batch of one squeezed)
  Tensor gradients;    // [C, h, w]
  int src_h = 0, src_w = 0;
};

// Runs one taped forward/backward and returns the tapped layer's
// activations and d(logit_class)/d(tap).
TapGrads tap_gradients(clf::ClassifierModel& model, const ImageF& image,
                       int class_id, const std::string& layer) {
  if (class_id < 0 || class_id >= model.spec().num_classes)
    throw RangeError("class_id " + std::to_string(class_id) + " out of range");

  nn::Var input = nn::constant(
      clf::images_to_tensor({&image}, model.spec().in_channels));
  auto trace = model.forward(input, /*training=*/false, nullptr);
  auto it = trace.taps.find(layer);
  if (it == trace.taps.end()) throw ConfigError("unknown layer tag '" + layer + "'");
  nn::Var tap = it->second;

  Tensor seed(trace.logits->value.shape());
  seed.at(0, class_id) = 1.0f;
  nn::backward(trace.logits, seed);
  if (!tap->has_grad())
    throw ConfigError("layer '" + layer + "' does not feed the logits");

  TapGrads out;
  const Tensor& v = tap->value;
  out.activations = Tensor({v.size(1), v.size(2), v.size(3)});
  out.gradients = Tensor({v.size(1), v.size(2), v.size(3)});
  std::copy(v.data(), v.data() + v.numel(), out.activations.data());
  std::copy(tap->grad.data(), tap->grad.data() + v.numel(), out.gradients.data());
  out.src_h = image.height;
  out.src_w = image.width;
  return out;
}

ActivationMap weighted_map(const TapGrads& tg, const std::vector<double>& weights,
                           int class_id, const std::string& image_id) {
  const int c = tg.activations.size(0), h = tg.activations.size(1),
            w = tg.activations.size(2);
  ActivationMap map;
  map.class_id = class_id;
  map.height = h;
  map.width = w;
  map.source_h = tg.src_h;
  map.source_w = tg.src_w;
  map.image_id = image_id;
  map.values.assign(static_cast<size_t>(h) * w, 0.0f);
  for (int ci = 0; ci < c; ++ci) {
    const float wc = static_cast<float>(weights[static_cast<size_t>(ci)]);
    if (wc == 0.0f) continue;
    const float* a = tg.activations.data() + static_cast<size_t>(ci) * h * w;
    for (int i = 0; i < h * w; ++i) map.values[static_cast<size_t>(i)] += wc * a[i];
  }
  normalize_by_max(map);
  return map;
}

}  // namespace

ActivationMap grad_cam(clf::ClassifierModel& model, const ImageF& image,
                       int class_id, const std::string& layer) {
  TapGrads tg = tap_gradients(model, image, class_id, layer);
  const int c = tg.gradients.size(0);
  const int plane = tg.gradients.size(1) * tg.gradients.size(2);
  std::vector<double> weights(static_cast<size_t>(c), 0.0);
  for (int ci = 0; ci < c; ++ci) {
    const float* g = tg.gradients.data() + static_cast<size_t>(ci) * plane;
    double acc = 0.0;
    for (int i = 0; i < plane; ++i) acc += g[i];
    weights[static_cast<size_t>(ci)] = acc / plane;
  }
  return weighted_map(tg, weights, class_id, "");
}

ActivationMap grad_cam_pp(clf::ClassifierModel& model, const ImageF& image,
                          int class_id, const std::string& layer) {
  TapGrads tg = tap_gradients(model, image, class_id, layer);
  const int c = tg.gradients.size(0);
  const int plane = tg.gradients.size(1) * tg.gradients.size(2);

  std::vector<double> weights(static_cast<size_t>(c), 0.0);
  std::vector<double> alpha(static_cast<size_t>(plane));
  for (int ci = 0; ci < c; ++ci) {
    const float* g = tg.gradients.data() + static_cast<size_t>(ci) * plane;
    const float* a = tg.activations.data() + static_cast<size_t>(ci) * plane;
    double sum_a = 0.0;
    for (int i = 0; i < plane; ++i) sum_a += a[i];

    double alpha_sum = 0.0;
    for (int i = 0; i < plane; ++i) {
      const double g1 = g[i];
      const double g2 = g1 * g1;
      const double denom = 2.0 * g2 + sum_a * g2 * g1;
      alpha[static_cast<size_t>(i)] = denom != 0.0 ? g2 / denom : 0.0;
      alpha_sum += alpha[static_cast<size_t>(i)];
    }
    if (alpha_sum == 0.0) continue;
    double wc = 0.0;
    for (int i = 0; i < plane; ++i)
      wc += alpha[static_cast<size_t>(i)] / alpha_sum * std::max(0.0, (double)g[i]);
    weights[static_cast<size_t>(ci)] = wc;
  }
  return weighted_map(tg, weights, class_id, "");
}

// ---------------------------------------------------------------------------
// Map store
// ---------------------------------------------------------------------------

namespace {
constexpr char kMapMagic[4] = {'W', 'S', 'C', 'M'};
}

MapStore::MapStore(const std::string& dir) : dir_(dir) {
  fs::create_directories(dir_);
  const fs::path idx = fs::path(dir_) / "_index.json";
  if (fs::exists(idx)) {
    std::ifstream in(idx);
    nlohmann::json j;
    in >> j;
    for (auto& [id, classes] : j.items())
      index_[id] = classes.get<std::vector<int>>();
  }
}

void MapStore::put(const std::string& image_id,
                   const std::vector<ActivationMap>& maps) {
  const fs::path path = fs::path(dir_) / (image_id + ".camz");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write map file " + path.string());
  out.write(kMapMagic, 4);
  const uint32_t count = static_cast<uint32_t>(maps.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& m : maps) {
    const int32_t head[5] = {m.class_id, m.height, m.width, m.source_h, m.source_w};
    out.write(reinterpret_cast<const char*>(head), sizeof(head));
    const auto raw_bytes =
        static_cast<uLong>(m.values.size() * sizeof(float));
    uLongf comp_bound = compressBound(raw_bytes);
    std::vector<Bytef> comp(comp_bound);
    if (compress2(comp.data(), &comp_bound,
                  reinterpret_cast<const Bytef*>(m.values.data()), raw_bytes,
                  6) != Z_OK)
      throw IoError("zlib compression failed for " + image_id);
    const uint64_t comp_size = comp_bound;
    const uint64_t raw_size = raw_bytes;
    out.write(reinterpret_cast<const char*>(&raw_size), sizeof(raw_size));
    out.write(reinterpret_cast<const char*>(&comp_size), sizeof(comp_size));
    out.write(reinterpret_cast<const char*>(comp.data()),
              static_cast<std::streamsize>(comp_size));
  }
  if (!out) throw IoError("short write on " + path.string());

  std::vector<int> classes;
  for (const auto& m : maps) classes.push_back(m.class_id);
  index_[image_id] = classes;
}

std::vector<ActivationMap> MapStore::get(const std::string& image_id) const {
  const fs::path path = fs::path(dir_) / (image_id + ".camz");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing map file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMapMagic, 4) != 0)
    throw IoError("bad map file magic in " + path.string());
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::vector<ActivationMap> maps(count);
  for (auto& m : maps) {
    int32_t head[5];
    in.read(reinterpret_cast<char*>(head), sizeof(head));
    m.class_id = head[0];
    m.height = head[1];
    m.width = head[2];
    m.source_h = head[3];
    m.source_w = head[4];
    m.image_id = image_id;
    uint64_t raw_size = 0, comp_size = 0;
    in.read(reinterpret_cast<char*>(&raw_size), sizeof(raw_size));
    in.read(reinterpret_cast<char*>(&comp_size), sizeof(comp_size));
    std::vector<Bytef> comp(comp_size);
    in.read(reinterpret_cast<char*>(comp.data()),
            static_cast<std::streamsize>(comp_size));
    m.values.assign(raw_size / sizeof(float), 0.0f);
    uLongf dest_len = static_cast<uLongf>(raw_size);
    if (uncompress(reinterpret_cast<Bytef*>(m.values.data()), &dest_len,
                   comp.data(), static_cast<uLong>(comp_size)) != Z_OK ||
        dest_len != raw_size)
      throw IoError("zlib decompression failed for " + path.string());
  }
  if (!in) throw IoError("truncated map file " + path.string());
  return maps;
}

bool MapStore::contains(const std::string& image_id) const {
  return index_.count(image_id) > 0;
}

std::vector<std::string> MapStore::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : index_) out.push_back(id);
  return out;
}

void MapStore::flush_index() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, classes] : index_) j[id] = classes;
  std::ofstream out(fs::path(dir_) / "_index.json");
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

CamMethod parse_cam_method(const std::string& name) {
  if (name == "gradcam") return CamMethod::kGradCam;
  if (name == "gradcampp") return CamMethod::kGradCamPp;
  throw ConfigError("unknown CAM method '" + name + "'");
}

ExtractSummary extract_maps(clf::ClassifierModel& model,
                            const data::DatasetIndex& index,
                            const std::vector<data::Split>& splits,
                            CamMethod method, const std::string& layer,
                            int input_size, MapStore& store) {
  ExtractSummary summary;
  for (const auto& rec : index.records) {
    bool selected = false;
    for (auto s : splits) selected = selected || rec.split == s;
    if (!selected) continue;

    std::vector<int> present;
    for (size_t c = 0; c < rec.labels.size(); ++c)
      if (rec.labels[c]) present.push_back(static_cast<int>(c));

    try {
      std::vector<ActivationMap> maps;
      if (!present.empty()) {
        ImageF img = to_float(pngio::read_image(rec.image_path));
        img = data::resize_bilinear(img, input_size, input_size);
        for (int c : present) {
          ActivationMap m = method == CamMethod::kGradCam
                                ? grad_cam(model, img, c, layer)
                                : grad_cam_pp(model, img, c, layer);
          m.image_id = rec.id;
          maps.push_back(std::move(m));
        }
      }
      store.put(rec.id, maps);
      summary.maps_written += static_cast<int>(maps.size());
      ++summary.images_processed;
    } catch (const IoError& e) {
      summary.failures.push_back(rec.id + ": " + e.what());
    }
  }
  store.flush_index();
  return summary;
}

}  // namespace wsseg::cam
