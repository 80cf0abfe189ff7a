#include "wsseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace wsseg::data {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw SchemaError("unknown split '" + s + "'");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<int> DatasetIndex::split_indices(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(static_cast<int>(i));
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DatasetIndex load_index(const std::string& manifest_path,
                        const std::vector<std::string>& class_names) {
  if (class_names.empty()) throw SchemaError("class_names must be non-empty");

  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);

  std::unordered_map<std::string, int> class_ids;
  for (size_t i = 0; i < class_names.size(); ++i)
    class_ids[class_names[i]] = static_cast<int>(i);

  DatasetIndex index;
  index.class_names = class_names;

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("manifest is empty");
  {
    auto header = split_csv_line(line);
    const std::vector<std::string> expect = {"id", "image_path", "labels",
                                             "mask_rle", "split"};
    if (header != std::vector<std::string>(expect))
      throw SchemaError("manifest header must be id,image_path,labels,mask_rle,split");
  }

  std::set<std::string> seen_ids;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 5)
      throw SchemaError("manifest line " + std::to_string(line_no) +
                        ": expected 5 fields, got " + std::to_string(fields.size()));

    SampleRecord rec;
    rec.id = fields[0];
    if (rec.id.empty())
      throw SchemaError("manifest line " + std::to_string(line_no) + ": empty id");
    if (!seen_ids.insert(rec.id).second)
      throw SchemaError("duplicate id '" + rec.id + "'");

    rec.image_path = fields[1];
    rec.labels.assign(class_names.size(), 0);
    if (!fields[2].empty()) {
      std::istringstream ls(fields[2]);
      std::string name;
      while (std::getline(ls, name, ';')) {
        auto it = class_ids.find(name);
        if (it == class_ids.end())
          throw SchemaError("unknown class name '" + name + "' (line " +
                            std::to_string(line_no) + ")");
        rec.labels[static_cast<size_t>(it->second)] = 1;
      }
    }
    if (!fields[3].empty()) {
      if (ends_with(fields[3], ".png"))
        rec.mask_path = fields[3];
      else
        rec.mask_rle = fields[3];
    }
    rec.split = parse_split(fields[4]);

    auto& c = index.counts[static_cast<int>(rec.split)];
    (rec.positive() ? c.positives : c.negatives) += 1;
    index.records.push_back(std::move(rec));
  }
  return index;
}

// ---------------------------------------------------------------------------

BalancedBatchStream::BalancedBatchStream(const DatasetIndex& index, Split split,
                                         int batch_size, double positive_fraction,
                                         uint64_t seed)
    : index_(index), batch_size_(batch_size), seed_(seed), draw_(seed) {
  if (batch_size < 2) throw DataError("batch_size must be >= 2");
  if (positive_fraction < 0.0 || positive_fraction > 1.0)
    throw DataError("positive_fraction must be in [0,1]");

  for (int i : index.split_indices(split)) {
    (index.records[static_cast<size_t>(i)].positive() ? positives_ : negatives_)
        .push_back(i);
  }
  pos_per_batch_ = static_cast<int>(std::lround(batch_size * positive_fraction));
  const int neg_per_batch = batch_size_ - pos_per_batch_;
  if (pos_per_batch_ > 0 && positives_.empty())
    throw DataError("no positive samples in split");
  if (neg_per_batch > 0 && negatives_.empty())
    throw DataError("no negative samples in split");

  // An epoch covers each required class at least once.
  int by_pos = pos_per_batch_ > 0
                   ? static_cast<int>((positives_.size() + pos_per_batch_ - 1) /
                                      static_cast<size_t>(pos_per_batch_))
                   : 0;
  int by_neg = neg_per_batch > 0
                   ? static_cast<int>((negatives_.size() + neg_per_batch - 1) /
                                      static_cast<size_t>(neg_per_batch))
                   : 0;
  batches_per_epoch_ = std::max(1, std::max(by_pos, by_neg));
  start_epoch(0);
}

void BalancedBatchStream::start_epoch(int epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  pos_used_ = neg_used_ = 0;
  draw_ = Rng(Rng::derive(seed_, 0x45504f43ULL /* "EPOC" */, static_cast<uint64_t>(epoch)));
  pos_order_ = positives_;
  neg_order_ = negatives_;
  draw_.shuffle(pos_order_);
  draw_.shuffle(neg_order_);
}

std::vector<int> BalancedBatchStream::take(std::vector<int>& order, size_t& used,
                                           const std::vector<int>& pool, int n) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (used < order.size()) {
      out.push_back(order[used++]);
    } else {
      // Exhausted within the epoch: sample with replacement.
      out.push_back(pool[static_cast<size_t>(
          draw_.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
    }
  }
  return out;
}

std::vector<int> BalancedBatchStream::next_batch() {
  if (cursor_ >= batches_per_epoch_) return {};
  ++cursor_;
  std::vector<int> batch = take(pos_order_, pos_used_, positives_, pos_per_batch_);
  std::vector<int> negs =
      take(neg_order_, neg_used_, negatives_, batch_size_ - pos_per_batch_);
  batch.insert(batch.end(), negs.begin(), negs.end());
  // Interleave deterministically so positives are not always leading.
  Rng mix(Rng::derive(seed_, 0x4d495858ULL /* "MIXX" */,
                      static_cast<uint64_t>(epoch_), static_cast<uint64_t>(cursor_)));
  mix.shuffle(batch);
  return batch;
}

}  // namespace wsseg::data
