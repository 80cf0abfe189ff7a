#include <cctype>
#include <sstream>
#include <string>

#include "wsseg/dataset.hpp"

namespace wsseg::data {

namespace {

// Column-major linear index <-> (y, x). start = x * height + y.
inline size_t linear_index(int pos, int height, int width, bool row_major) {
  if (row_major) return static_cast<size_t>(pos);
  const int x = pos / height;
  const int y = pos % height;
  return static_cast<size_t>(y) * width + x;
}

}  // namespace

BinaryMask decode_rle(const std::string& rle, int height, int width, bool row_major) {
  BinaryMask mask(height, width);
  std::istringstream in(rle);
  std::string tok;
  if (!(in >> tok)) throw ParseError("empty RLE string");
  if (tok == "-1") {
    if (in >> tok) throw ParseError("tokens after -1 sentinel");
    return mask;
  }

  const int64_t total = static_cast<int64_t>(height) * width;
  auto parse_int = [](const std::string& t) -> int64_t {
    if (t.empty()) throw ParseError("empty RLE token");
    for (char ch : t)
      if (!std::isdigit(static_cast<unsigned char>(ch)))
        throw ParseError("malformed RLE token '" + t + "'");
    return std::stoll(t);
  };

  bool have_first = true;
  while (have_first) {
    int64_t start = parse_int(tok);
    std::string len_tok;
    if (!(in >> len_tok)) throw ParseError("RLE has odd token count");
    int64_t run = parse_int(len_tok);
    if (start + run > total)
      throw BoundsError("RLE run [" + std::to_string(start) + ", +" +
                        std::to_string(run) + ") exceeds " + std::to_string(total) +
                        " pixels");
    for (int64_t p = start; p < start + run; ++p)
      mask.data[linear_index(static_cast<int>(p), height, width, row_major)] = 1;
    have_first = static_cast<bool>(in >> tok);
  }
  return mask;
}

// Runs are emitted in ascending start order and maximal by construction:
// a run closes only when the scan hits a zero pixel.

std::string encode_rle(const BinaryMask& mask, bool row_major) {
  const int total = mask.height * mask.width;
  std::ostringstream out;
  bool any = false;
  int run_start = -1;
  for (int pos = 0; pos <= total; ++pos) {
    uint8_t v = 0;
    if (pos < total) {
      const int x = row_major ? pos % mask.width : pos / mask.height;
      const int y = row_major ? pos / mask.width : pos % mask.height;
      v = mask.at(y, x);
    }
    if (v && run_start < 0) {
      run_start = pos;
    } else if (!v && run_start >= 0) {
      if (any) out << ' ';
      out << run_start << ' ' << (pos - run_start);
      any = true;
      run_start = -1;
    }
  }
  return any ? out.str() : std::string("-1");
}

}  // namespace wsseg::data
