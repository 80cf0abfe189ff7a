#include "wsseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "wsseg/dataset.hpp"
#include "wsseg/pngio.hpp"
#include "wsseg/rng.hpp"
#include "wsseg/trimap.hpp"

namespace wsseg::synth {

namespace fs = std::filesystem;

namespace {

struct Blob {
  int cls;     // 0 square, 1 disk
  int cy, cx;  // center
  int r;       // half-side / radius
};

bool overlaps(const Blob& a, const Blob& b) {
  const int d = a.r + b.r + 3;
  return std::abs(a.cy - b.cy) < d && std::abs(a.cx - b.cx) < d;
}

void paint(ImageF& img, Trimap& mask, const Blob& blob, float intensity) {
  for (int y = blob.cy - blob.r; y <= blob.cy + blob.r; ++y)
    for (int x = blob.cx - blob.r; x <= blob.cx + blob.r; ++x) {
      if (y < 0 || y >= img.height || x < 0 || x >= img.width) continue;
      bool inside;
      if (blob.cls == 0) {
        inside = true;  // square fills its bounding box
      } else {
        const int dy = y - blob.cy, dx = x - blob.cx;
        inside = dy * dy + dx * dx <= blob.r * blob.r;
      }
      if (inside) {
        img.at(0, y, x) = intensity;
        mask.at(y, x) = static_cast<uint8_t>(blob.cls + 1);
      }
    }
}

// Composition mix; two-object categories keep multi-instance cases common.
int draw_category(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.20) return 0;  // empty
  if (u < 0.40) return 1;  // one square
  if (u < 0.60) return 2;  // one disk
  if (u < 0.75) return 3;  // square + disk
  if (u < 0.875) return 4; // two squares
  return 5;                // two disks
}

}  // namespace

std::string generate_blobs_dataset(const std::string& dir,
                                   const SyntheticConfig& cfg) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest under " + dir);
  manifest << "id,image_path,labels,mask_rle,split\n";

  const int total = cfg.train_count + cfg.val_count + cfg.test_count;
  const int S = cfg.image_size;
  for (int i = 0; i < total; ++i) {
    Rng rng(Rng::derive(cfg.seed, 0x424c4f42ULL /* "BLOB" */, i));
    const char* split = i < cfg.train_count ? "train"
                        : i < cfg.train_count + cfg.val_count ? "val"
                                                              : "test";

    ImageF img(S, S, 1, cfg.background);
    for (float& v : img.data)
      v = std::clamp(v + static_cast<float>(rng.normal(0.0, cfg.noise_std)),
                     0.0f, 1.0f);
    Trimap mask(S, S);

    std::vector<Blob> blobs;
    const int category = draw_category(rng);
    auto want = [&category]() -> std::vector<int> {
      switch (category) {
        case 1: return {0};
        case 2: return {1};
        case 3: return {0, 1};
        case 4: return {0, 0};
        case 5: return {1, 1};
        default: return {};
      }
    }();
    for (int cls : want) {
      for (int attempt = 0; attempt < 60; ++attempt) {
        Blob b;
        b.cls = cls;
        b.r = cls == 0 ? static_cast<int>(rng.uniform_int(7, 13))
                       : static_cast<int>(rng.uniform_int(7, 13));
        b.cy = static_cast<int>(rng.uniform_int(b.r + 2, S - 3 - b.r));
        b.cx = static_cast<int>(rng.uniform_int(b.r + 2, S - 3 - b.r));
        bool ok = true;
        for (const auto& other : blobs) ok = ok && !overlaps(b, other);
        if (ok) {
          blobs.push_back(b);
          break;
        }
      }
    }
    bool has[2] = {false, false};
    for (const auto& b : blobs) {
      const float base = b.cls == 0 ? 0.80f : 0.45f;
      const float jitter = static_cast<float>(rng.uniform(-0.04, 0.04));
      paint(img, mask, b, base + jitter);
      has[b.cls] = true;
    }
    // Re-apply sensor noise on top of the blobs.
    for (float& v : img.data)
      v = std::clamp(v + static_cast<float>(rng.normal(0.0, cfg.noise_std * 0.5)),
                     0.0f, 1.0f);

    const std::string id = "blob" + std::to_string(i);
    const std::string img_rel = "images/" + id + ".png";
    const std::string mask_rel = "masks/" + id + ".png";
    pngio::write_gray((fs::path(dir) / img_rel).string(), to_u8(img));
    save_trimap((fs::path(dir) / mask_rel).string(), mask);

    std::string labels;
    if (has[0]) labels += kBlobClassNames[0];
    if (has[1]) {
      if (!labels.empty()) labels += ";";
      labels += kBlobClassNames[1];
    }
    manifest << id << "," << (fs::path(dir) / img_rel).string() << "," << labels
             << "," << (fs::path(dir) / mask_rel).string() << "," << split
             << "\n";
  }
  return (fs::path(dir) / "manifest.csv").string();
}

}  // namespace wsseg::synth
