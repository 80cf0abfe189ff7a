#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "wsseg/dataset.hpp"

using namespace wsseg;
using namespace wsseg::data;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("wsseg_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

BinaryMask random_mask(Rng& rng, int max_side = 64) {
  int h = static_cast<int>(rng.uniform_int(1, max_side));
  int w = static_cast<int>(rng.uniform_int(1, max_side));
  BinaryMask m(h, w);
  double density = rng.uniform();
  for (auto& v : m.data) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("decode_rle sentinel yields all-zero mask") {
  BinaryMask m = decode_rle("-1", 4, 4);
  for (uint8_t v : m.data) CHECK(v == 0);
}

TEST_CASE("decode_rle full run covers 2x2 mask") {
  BinaryMask m = decode_rle("0 4", 2, 2);
  for (uint8_t v : m.data) CHECK(v == 1);
  // round-trip oracle
  CHECK(encode_rle(m) == "0 4");
}

TEST_CASE("decode_rle places runs in column-major order") {
  BinaryMask m = decode_rle("5 3", 4, 4);
  // Brute-force index enumeration: positions 5,6,7 with pos = x*h + y.
  std::set<std::pair<int, int>> expect;
  for (int p = 5; p < 8; ++p) expect.insert({p % 4, p / 4});  // (y, x)
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(m.at(y, x) == (expect.count({y, x}) ? 1 : 0));
}

TEST_CASE("decode_rle rejects malformed and out-of-bounds input") {
  CHECK_THROWS_AS(decode_rle("a b", 4, 4), ParseError);
  CHECK_THROWS_AS(decode_rle("3", 4, 4), ParseError);
  CHECK_THROWS_AS(decode_rle("0 -2", 2, 2), ParseError);
  CHECK_THROWS_AS(decode_rle("15 2", 4, 4), BoundsError);
  CHECK_THROWS_AS(decode_rle("", 4, 4), ParseError);
}

TEST_CASE("encode_rle trivial cases") {
  BinaryMask zero(3, 5);
  CHECK(encode_rle(zero) == "-1");
  BinaryMask ones(2, 2);
  std::fill(ones.data.begin(), ones.data.end(), 1);
  CHECK(encode_rle(ones) == "0 4");
}

TEST_CASE("encode_rle emits maximal ascending runs") {
  // Column-major pattern with two separate runs.
  BinaryMask m(4, 4);
  m.at(1, 0) = 1;  // pos 1
  m.at(2, 0) = 1;  // pos 2
  m.at(1, 1) = 1;  // pos 5
  CHECK(encode_rle(m) == "1 2 5 1");
}

TEST_CASE("rle round trip is bit-exact over 1000 random masks") {
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    BinaryMask m = random_mask(rng);
    BinaryMask back = decode_rle(encode_rle(m), m.height, m.width);
    REQUIRE(back == m);
  }
}

TEST_CASE("rle row-major flag round trips too") {
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    BinaryMask m = random_mask(rng, 32);
    BinaryMask back = decode_rle(encode_rle(m, true), m.height, m.width, true);
    REQUIRE(back == m);
  }
}

TEST_CASE("load_index ingests a small manifest") {
  auto dir = make_temp_dir("manifest_small");
  auto path = dir / "manifest.csv";
  {
    std::ofstream f(path);
    f << "id,image_path,labels,mask_rle,split\n";
    f << "a,imgs/a.png,lesion,-1,train\n";
    f << "b,imgs/b.png,,,val\n";
    f << "c,imgs/c.png,lesion,0 4,test\n";
  }
  auto index = load_index(path.string(), {"lesion"});
  REQUIRE(index.records.size() == 3);
  CHECK(index.records[0].labels[0] == 1);
  CHECK(index.records[1].labels[0] == 0);
  CHECK(!index.records[1].mask_rle.has_value());
  CHECK(index.records[2].mask_rle.value() == "0 4");
  CHECK(index.split_counts(Split::kTrain).positives == 1);
  CHECK(index.split_counts(Split::kVal).negatives == 1);
}

TEST_CASE("load_index rejects duplicates and unknown classes") {
  auto dir = make_temp_dir("manifest_bad");
  {
    std::ofstream f(dir / "dup.csv");
    f << "id,image_path,labels,mask_rle,split\n";
    f << "a,x.png,lesion,,train\n";
    f << "a,y.png,lesion,,train\n";
  }
  CHECK_THROWS_AS(load_index((dir / "dup.csv").string(), {"lesion"}), SchemaError);
  {
    std::ofstream f(dir / "unk.csv");
    f << "id,image_path,labels,mask_rle,split\n";
    f << "a,x.png,tumor,,train\n";
  }
  CHECK_THROWS_AS(load_index((dir / "unk.csv").string(), {"lesion"}), SchemaError);
  CHECK_THROWS_AS(load_index((dir / "missing.csv").string(), {"lesion"}), IoError);
}

TEST_CASE("load_index reproduces the SIIM split bookkeeping") {
  auto dir = make_temp_dir("manifest_siim");
  auto path = dir / "siim.csv";
  {
    std::ofstream f(path);
    f << "id,image_path,labels,mask_rle,split\n";
    auto emit = [&f](int n, const char* split, bool pos, int& serial) {
      for (int i = 0; i < n; ++i)
        f << "s" << serial++ << ",x.png," << (pos ? "pneumothorax" : "") << ",,"
          << split << "\n";
    };
    int serial = 0;
    emit(2379, "train", true, serial);
    emit(8296, "train", false, serial);
    emit(145, "val", true, serial);
    emit(541, "val", false, serial);
    emit(145, "test", true, serial);
    emit(541, "test", false, serial);
  }
  auto index = load_index(path.string(), {"pneumothorax"});
  CHECK(index.split_counts(Split::kTrain).positives == 2379);
  CHECK(index.split_counts(Split::kTrain).negatives == 8296);
  CHECK(index.split_counts(Split::kVal).positives == 145);
  CHECK(index.split_counts(Split::kVal).negatives == 541);
  CHECK(index.split_counts(Split::kTest).positives == 145);
  CHECK(index.split_counts(Split::kTest).negatives == 541);
}

TEST_CASE("load_index is a pure function of file contents") {
  auto dir = make_temp_dir("manifest_pure");
  auto path = dir / "m.csv";
  {
    std::ofstream f(path);
    f << "id,image_path,labels,mask_rle,split\n";
    f << "a,x.png,lesion,1 3,train\n";
    f << "b,y.png,,,val\n";
  }
  auto a = load_index(path.string(), {"lesion"});
  auto b = load_index(path.string(), {"lesion"});
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].id == b.records[i].id);
    CHECK(a.records[i].labels == b.records[i].labels);
    CHECK(a.records[i].split == b.records[i].split);
  }
}

namespace {

DatasetIndex synthetic_index(int n_pos, int n_neg) {
  DatasetIndex index;
  index.class_names = {"lesion"};
  for (int i = 0; i < n_pos + n_neg; ++i) {
    SampleRecord r;
    r.id = "s" + std::to_string(i);
    r.image_path = "x.png";
    r.labels = {static_cast<uint8_t>(i < n_pos ? 1 : 0)};
    r.split = Split::kTrain;
    auto& c = index.counts[0];
    (r.positive() ? c.positives : c.negatives) += 1;
    index.records.push_back(r);
  }
  return index;
}

}  // namespace

TEST_CASE("balanced batches hold the positive count exactly") {
  auto index = synthetic_index(25, 100);
  BalancedBatchStream stream(index, Split::kTrain, 8, 0.25, 7);
  int batches = 0;
  for (auto batch = stream.next_batch(); !batch.empty(); batch = stream.next_batch()) {
    REQUIRE(batch.size() == 8);
    int pos = 0;
    for (int idx : batch) pos += index.records[static_cast<size_t>(idx)].positive();
    CHECK(pos == 2);
    ++batches;
  }
  CHECK(batches == stream.batches_per_epoch());
  // 100 negatives / 6 per batch -> 17 batches covers the majority side.
  CHECK(batches == 17);
}

TEST_CASE("balanced batches, fraction 0 means all negatives") {
  auto index = synthetic_index(25, 100);
  BalancedBatchStream stream(index, Split::kTrain, 8, 0.0, 7);
  for (auto batch = stream.next_batch(); !batch.empty(); batch = stream.next_batch())
    for (int idx : batch) CHECK(!index.records[static_cast<size_t>(idx)].positive());
}

TEST_CASE("balanced batches replay exactly under a fixed seed") {
  auto index = synthetic_index(25, 100);
  for (int epoch = 0; epoch < 2; ++epoch) {
    BalancedBatchStream a(index, Split::kTrain, 8, 0.25, 7);
    BalancedBatchStream b(index, Split::kTrain, 8, 0.25, 7);
    a.start_epoch(epoch);
    b.start_epoch(epoch);
    for (auto ba = a.next_batch(); !ba.empty(); ba = a.next_batch()) {
      auto bb = b.next_batch();
      REQUIRE(ba == bb);
    }
    CHECK(b.next_batch().empty());
  }
}

TEST_CASE("balanced batches fail on an empty required class") {
  auto index = synthetic_index(0, 50);
  CHECK_THROWS_AS(BalancedBatchStream(index, Split::kTrain, 8, 0.25, 7), DataError);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

ImageF gradient_image(int h, int w) {
  ImageF img(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(0, y, x) = static_cast<float>(y * w + x) / static_cast<float>(h * w);
  return img;
}

}  // namespace

TEST_CASE("augment no-op config is a pure resize") {
  AugmentationConfig cfg;
  cfg.output_size = 64;
  ImageF img = gradient_image(64, 64);
  Trimap mask(64, 64);
  mask.at(10, 12) = 1;
  Rng rng(5);
  auto out = augment(img, mask, cfg, rng);
  REQUIRE(out.image.height == 64);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(out.image.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
  REQUIRE(out.mask.has_value());
  CHECK(out.mask->labels == mask.labels);
}

TEST_CASE("augment hflip is an involution") {
  AugmentationConfig cfg;
  cfg.output_size = 64;
  cfg.hflip_prob = 1.0f;
  ImageF img = gradient_image(64, 64);
  Rng r1(1), r2(2);
  auto once = augment(img, std::nullopt, cfg, r1);
  auto twice = augment(once.image, std::nullopt, cfg, r2);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(twice.image.data[i] == doctest::Approx(img.data[i]).epsilon(1e-5));
}

TEST_CASE("augment never invents mask labels") {
  AugmentationConfig cfg;
  cfg.output_size = 48;
  cfg.scale_min = 0.7f;
  cfg.scale_max = 1.4f;
  cfg.rotation_limit = 30.0f;
  cfg.hflip_prob = 0.5f;
  cfg.blur_prob = 0.5f;
  cfg.brightness_limit = 0.2f;

  ImageF img = gradient_image(64, 64);
  Trimap mask(64, 64);
  for (int y = 20; y < 40; ++y)
    for (int x = 8; x < 28; ++x) mask.at(y, x) = 1;
  for (int y = 45; y < 60; ++y)
    for (int x = 40; x < 60; ++x) mask.at(y, x) = 2;

  std::set<uint8_t> allowed = {0, 1, 2, Trimap::kIgnore};
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    auto out = augment(img, mask, cfg, rng);
    REQUIRE(out.mask.has_value());
    for (uint8_t v : out.mask->labels) CHECK(allowed.count(v) == 1);
  }
}

TEST_CASE("augment applies the same geometry to image and mask") {
  AugmentationConfig cfg;
  cfg.output_size = 64;
  cfg.rotation_limit = 25.0f;
  cfg.scale_min = 0.8f;
  cfg.scale_max = 1.2f;
  cfg.hflip_prob = 0.5f;

  // Mask marks exactly the bright square painted into the image.
  ImageF img(64, 64, 1, 0.0f);
  Trimap mask(64, 64);
  for (int y = 24; y < 44; ++y)
    for (int x = 18; x < 38; ++x) {
      img.at(0, y, x) = 1.0f;
      mask.at(y, x) = 1;
    }
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto out = augment(img, mask, cfg, rng);
    // Compare image and mask away from label boundaries, where bilinear
    // blending cannot straddle the edge.
    int fg_checked = 0;
    for (int y = 2; y < 62; ++y)
      for (int x = 2; x < 62; ++x) {
        uint8_t label = out.mask->at(y, x);
        bool uniform = true;
        for (int dy = -2; dy <= 2 && uniform; ++dy)
          for (int dx = -2; dx <= 2 && uniform; ++dx)
            uniform = out.mask->at(y + dy, x + dx) == label;
        if (!uniform) continue;
        float v = out.image.at(0, y, x);
        if (label == 1) {
          CHECK(v > 0.9f);
          ++fg_checked;
        } else if (label == 0) {
          CHECK(v < 0.1f);
        }
      }
    CHECK(fg_checked > 0);
  }
}
