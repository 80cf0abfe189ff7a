#include "wsseg/trimap.hpp"

#include "wsseg/pngio.hpp"

namespace wsseg {

void save_trimap(const std::string& path, const Trimap& t) {
  ImageU8 img(t.height, t.width, 1);
  img.data = t.labels;
  pngio::write_labels(path, img);
}

Trimap load_trimap(const std::string& path) {
  ImageU8 img = pngio::read_labels(path);
  Trimap t(img.height, img.width);
  t.labels = img.data;
  return t;
}

}  // namespace wsseg
