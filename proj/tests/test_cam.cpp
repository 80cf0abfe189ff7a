#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "wsseg/cam.hpp"
#include "wsseg/synthetic.hpp"

using namespace wsseg;
using namespace wsseg::cam;
namespace fs = std::filesystem;

namespace {

// Shared trained toy classifier; built once, reused by the oracle tests.
struct TrainedFixture {
  clf::ClassifierHandle model;
  fs::path dir;
  data::DatasetIndex index;
};

TrainedFixture& fixture() {
  static TrainedFixture fx = [] {
    TrainedFixture f;
    f.dir = fs::temp_directory_path() / "wsseg_test_cam_fixture";
    fs::remove_all(f.dir);
    synth::SyntheticConfig scfg;
    scfg.train_count = 160;
    scfg.val_count = 40;
    scfg.seed = 11;
    auto manifest = synth::generate_blobs_dataset(f.dir.string(), scfg);
    f.index = data::load_index(manifest, {"square", "disk"});

    clf::ClassifierSpec spec;
    spec.backbone_id = "toy-cnn";
    spec.num_classes = 2;
    spec.dropblock.drop_prob = 0.1f;
    f.model = clf::build_classifier(spec, 41);

    clf::ClassifierTrainConfig tcfg;
    tcfg.epochs = 6;
    tcfg.batch_size = 16;
    tcfg.seed = 13;
    clf::train_classifier(*f.model, f.index, tcfg, 1);
    return f;
  }();
  return fx;
}

ImageF blob_image_with_square(int& y0, int& x0, int& y1, int& x1) {
  // One bright square on a noisy background, nothing else.
  Rng rng(505);
  ImageF img(64, 64, 1, 0.12f);
  for (float& v : img.data)
    v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.02)), 0.0f, 1.0f);
  y0 = 14;
  x0 = 30;
  y1 = 34;
  x1 = 50;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) img.at(0, y, x) = 0.8f;
  return img;
}

double class_logit(clf::ClassifierModel& model, const ImageF& img, int cls) {
  nn::NoGradGuard ng;
  auto trace =
      model.forward(nn::constant(clf::images_to_tensor({&img}, 1)), false, nullptr);
  return trace.logits->value.at(0, cls);
}

// Occlusion-sensitivity oracle: grey out 8x8 patches and find where the
// class logit drops the most.
std::pair<int, int> occlusion_argmax(clf::ClassifierModel& model,
                                     const ImageF& img, int cls) {
  const double base = class_logit(model, img, cls);
  double best_drop = -1e30;
  std::pair<int, int> best{0, 0};
  for (int y = 0; y + 8 <= img.height; y += 4)
    for (int x = 0; x + 8 <= img.width; x += 4) {
      ImageF patched = img;
      for (int yy = y; yy < y + 8; ++yy)
        for (int xx = x; xx < x + 8; ++xx) patched.at(0, yy, xx) = 0.12f;
      const double drop = base - class_logit(model, patched, cls);
      if (drop > best_drop) {
        best_drop = drop;
        best = {y + 4, x + 4};  // patch center
      }
    }
  return best;
}

}  // namespace

TEST_CASE("grad_cam with a single-channel layer is the rectified activation") {
  clf::ClassifierSpec spec;
  spec.backbone_id = "toy-cnn";
  spec.num_classes = 1;
  auto model = clf::build_classifier(spec, 3);
  Rng rng(4);
  ImageF img(64, 64, 1);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());

  // The "scores" tap has one channel for k=1 and a uniform positive
  // gradient (1/HW) from global average pooling.
  auto map = grad_cam(*model, img, 0, "scores");
  nn::NoGradGuard ng;
  auto trace =
      model->forward(nn::constant(clf::images_to_tensor({&img}, 1)), false, nullptr);
  const Tensor& scores = trace.taps["scores"]->value;
  float mx = 0.0f;
  for (int64_t i = 0; i < scores.numel(); ++i)
    mx = std::max(mx, std::max(0.0f, scores[i]));
  REQUIRE(mx > 0.0f);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      CHECK(map.at(y, x) ==
            doctest::Approx(std::max(0.0f, scores.at(0, 0, y, x)) / mx)
                .epsilon(1e-4));
}

TEST_CASE("grad_cam with a uniformly negative gradient is all-zero") {
  clf::ClassifierSpec spec;
  spec.backbone_id = "toy-cnn";
  spec.num_classes = 1;
  auto model = clf::build_classifier(spec, 5);
  // Force the 1x1 score weights negative: d logit / d head3 is then a
  // uniform negative constant per channel.
  auto params = model->params();
  for (auto& [name, var] : params.params)
    if (name == "score.weight")
      for (int64_t i = 0; i < var->value.numel(); ++i)
        var->value[i] = -std::abs(var->value[i]) - 0.05f;

  Rng rng(6);
  ImageF img(64, 64, 1);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  auto map = grad_cam(*model, img, 0, "head3");
  for (float v : map.values) CHECK(v == 0.0f);
}

TEST_CASE("grad_cam errors: bad class, bad layer") {
  clf::ClassifierSpec spec;
  spec.num_classes = 2;
  auto model = clf::build_classifier(spec, 7);
  ImageF img(64, 64, 1, 0.3f);
  CHECK_THROWS_AS(grad_cam(*model, img, 5, "head3"), RangeError);
  CHECK_THROWS_AS(grad_cam(*model, img, 0, "nope"), ConfigError);
}

TEST_CASE("grad_cam normalization is idempotent and in range") {
  auto& fx = fixture();
  int y0, x0, y1, x1;
  ImageF img = blob_image_with_square(y0, x0, y1, x1);
  auto map = grad_cam(*fx.model, img, 0, "head3");
  for (float v : map.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  ActivationMap twice = map;
  normalize_by_max(twice);
  for (size_t i = 0; i < map.values.size(); ++i)
    CHECK(twice.values[i] == doctest::Approx(map.values[i]).epsilon(1e-6));
}

TEST_CASE("grad_cam argmax agrees with the occlusion oracle on a square") {
  auto& fx = fixture();
  int y0, x0, y1, x1;
  ImageF img = blob_image_with_square(y0, x0, y1, x1);

  auto occ = occlusion_argmax(*fx.model, img, 0);
  // The oracle itself must localize inside the square's bounding box.
  REQUIRE(occ.first >= y0);
  REQUIRE(occ.first < y1);
  REQUIRE(occ.second >= x0);
  REQUIRE(occ.second < x1);

  auto map = upsample(grad_cam(*fx.model, img, 0, "head3"), 64, 64);
  int by = 0, bx = 0;
  float best = -1.0f;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (map.at(y, x) > best) {
        best = map.at(y, x);
        by = y;
        bx = x;
      }
  CHECK(by >= y0);
  CHECK(by < y1);
  CHECK(bx >= x0);
  CHECK(bx < x1);
}

TEST_CASE("grad_cam argmax is invariant to positive score-weight rescaling") {
  auto& fx = fixture();
  int y0, x0, y1, x1;
  ImageF img = blob_image_with_square(y0, x0, y1, x1);
  auto before = grad_cam(*fx.model, img, 0, "head3");

  auto params = fx.model->params();
  for (auto& [name, var] : params.params)
    if (name == "score.weight" || name == "score.bias")
      for (int64_t i = 0; i < var->value.numel(); ++i) var->value[i] *= 3.0f;
  auto after = grad_cam(*fx.model, img, 0, "head3");
  for (auto& [name, var] : params.params)
    if (name == "score.weight" || name == "score.bias")
      for (int64_t i = 0; i < var->value.numel(); ++i) var->value[i] /= 3.0f;

  for (size_t i = 0; i < before.values.size(); ++i)
    CHECK(after.values[i] == doctest::Approx(before.values[i]).epsilon(1e-3));
}

TEST_CASE("grad_cam_pp equals grad_cam for a linear nonnegative score") {
  clf::ClassifierSpec spec;
  spec.backbone_id = "toy-cnn";
  spec.num_classes = 1;
  auto model = clf::build_classifier(spec, 9);
  // Make the logit exactly linear in head3 with nonnegative weights:
  // gradients at head3 are then spatially constant per channel, so the
  // alphas collapse to a uniform spatial average.
  auto params = model->params();
  Rng wr(17);
  for (auto& [name, var] : params.params)
    if (name == "score.weight")
      for (int64_t i = 0; i < var->value.numel(); ++i)
        var->value[i] = static_cast<float>(wr.uniform(0.05, 1.0));

  Rng rng(10);
  ImageF img(64, 64, 1);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());

  auto a = grad_cam(*model, img, 0, "head3");
  auto b = grad_cam_pp(*model, img, 0, "head3");
  REQUIRE(a.values.size() == b.values.size());
  for (size_t i = 0; i < a.values.size(); ++i)
    CHECK(b.values[i] == doctest::Approx(a.values[i]).epsilon(1e-4));
}

TEST_CASE("grad_cam_pp lights up both instances of a two-blob image") {
  auto& fx = fixture();
  // Two disjoint squares of the same class.
  Rng rng(606);
  ImageF img(64, 64, 1, 0.12f);
  for (float& v : img.data)
    v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.02)), 0.0f, 1.0f);
  auto paint_square = [&img](int cy, int cx, int r) {
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x) img.at(0, y, x) = 0.8f;
  };
  paint_square(16, 14, 8);
  paint_square(46, 48, 8);

  // Occlusion oracle: both regions are causal for the square logit.
  const double base = class_logit(*fx.model, img, 0);
  for (auto [cy, cx] : {std::pair{16, 14}, std::pair{46, 48}}) {
    ImageF patched = img;
    for (int y = cy - 8; y <= cy + 8; ++y)
      for (int x = cx - 8; x <= cx + 8; ++x) patched.at(0, y, x) = 0.12f;
    CHECK(base - class_logit(*fx.model, patched, 0) > 0.0);
  }

  auto map = upsample(grad_cam_pp(*fx.model, img, 0, "head3"), 64, 64);
  float peak_a = 0.0f, peak_b = 0.0f;
  for (int y = 8; y <= 24; ++y)
    for (int x = 6; x <= 22; ++x) peak_a = std::max(peak_a, map.at(y, x));
  for (int y = 38; y <= 54; ++y)
    for (int x = 40; x <= 56; ++x) peak_b = std::max(peak_b, map.at(y, x));
  CHECK(peak_a > 0.5f);
  CHECK(peak_b > 0.5f);
}

TEST_CASE("extraction is deterministic") {
  auto& fx = fixture();
  int y0, x0, y1, x1;
  ImageF img = blob_image_with_square(y0, x0, y1, x1);
  auto a = grad_cam(*fx.model, img, 0, "head3");
  auto b = grad_cam(*fx.model, img, 0, "head3");
  CHECK(a.values == b.values);
}

TEST_CASE("map store round trip and label gating") {
  auto& fx = fixture();
  fs::path store_dir = fs::temp_directory_path() / "wsseg_test_mapstore";
  fs::remove_all(store_dir);
  MapStore store(store_dir.string());

  // Small slice of the fixture index: use val split only.
  auto summary = extract_maps(*fx.model, fx.index, {data::Split::kVal},
                              CamMethod::kGradCamPp, "head3", 64, store);
  CHECK(summary.failures.empty());
  CHECK(summary.images_processed == 40);

  int checked_gating = 0;
  for (const auto& rec : fx.index.records) {
    if (rec.split != data::Split::kVal) continue;
    int present = 0;
    for (auto l : rec.labels) present += l;
    auto maps = store.get(rec.id);
    CHECK(static_cast<int>(maps.size()) == present);
    ++checked_gating;
  }
  CHECK(checked_gating == 40);

  // Reload through a fresh store handle: values identical.
  MapStore reloaded(store_dir.string());
  for (const auto& id : store.ids()) {
    auto a = store.get(id);
    auto b = reloaded.get(id);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].values.size() == b[i].values.size());
      for (size_t v = 0; v < a[i].values.size(); ++v)
        CHECK(std::abs(a[i].values[v] - b[i].values[v]) < 1e-6f);
    }
  }
}

TEST_CASE("extract_maps records missing files and keeps going") {
  auto& fx = fixture();
  data::DatasetIndex broken = fx.index;
  // Break one val image path.
  for (auto& rec : broken.records)
    if (rec.split == data::Split::kVal && rec.positive()) {
      rec.image_path = "/nonexistent/image.png";
      break;
    }
  fs::path store_dir = fs::temp_directory_path() / "wsseg_test_mapstore_fail";
  fs::remove_all(store_dir);
  MapStore store(store_dir.string());
  auto summary = extract_maps(*fx.model, broken, {data::Split::kVal},
                              CamMethod::kGradCam, "head3", 64, store);
  CHECK(summary.failures.size() == 1);
  CHECK(summary.images_processed == 39);
}
