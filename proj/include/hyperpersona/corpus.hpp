#pragma once

#include "hyperpersona/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hyperpersona {

struct TextItem {
  std::string item_id;
  std::string text;
};

// One (item, annotator, label) triple. Item and annotator are dense indices
// into the owning corpus; their opaque string ids live there.
struct AnnotationRecord {
  std::size_t item = 0;
  std::size_t annotator = 0;
  int label = 0;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

class PerspectivistCorpus {
 public:
  explicit PerspectivistCorpus(int num_classes = 2);

  int num_classes() const { return num_classes_; }
  std::size_t num_items() const { return items_.size(); }
  std::size_t num_annotators() const { return annotators_.size(); }

  const std::vector<TextItem>& items() const { return items_; }
  const std::vector<AnnotationRecord>& records() const { return records_; }
  const std::vector<std::string>& annotators() const { return annotators_; }

  const std::string& item_id(std::size_t item) const { return items_.at(item).item_id; }
  const std::string& annotator_id(std::size_t annotator) const { return annotators_.at(annotator); }

  std::optional<std::size_t> find_item(const std::string& item_id) const;
  std::optional<std::size_t> find_annotator(const std::string& annotator_id) const;

  // Registers the item if unseen; a repeated id must carry the same text.
  std::size_t add_item(const std::string& item_id, const std::string& text);
  // Registers the annotator if unseen, in first-occurrence order.
  std::size_t add_annotator(const std::string& annotator_id);
  // Throws IntegrityError on a duplicate (item, annotator) pair and
  // SchemaError on a label outside [0, C).
  void add_record(std::size_t item, std::size_t annotator, int label);

  // Votes of every annotator of each item, indexed by item.
  std::vector<std::vector<int>> votes_by_item() const;

 private:
  int num_classes_;
  std::vector<TextItem> items_;
  std::unordered_map<std::string, std::size_t> item_index_;
  std::vector<std::string> annotators_;
  std::unordered_map<std::string, std::size_t> annotator_index_;
  std::vector<AnnotationRecord> records_;
  std::unordered_map<std::uint64_t, std::size_t> pair_index_;
};

// Remaps external column names onto the canonical record keys. When
// label_values is non-empty, the stringified label field is looked up in it
// and its position is the class index; otherwise labels must be integers.
struct FieldMap {
  std::string item_id = "item_id";
  std::string text = "text";
  std::string annotator_id = "annotator_id";
  std::string label = "label";
  std::vector<std::string> label_values;
  int num_classes = 2;

  static FieldMap from_file(const std::filesystem::path& path);
};

PerspectivistCorpus load_jsonl(const std::filesystem::path& path, const FieldMap& schema = {});
PerspectivistCorpus parse_jsonl(std::istream& in, const FieldMap& schema = {});
void write_jsonl(const PerspectivistCorpus& corpus, std::ostream& out);

// Plurality class per item; ties go to the lowest class index.
std::vector<int> majority_labels(const PerspectivistCorpus& corpus);
int majority_vote(std::span<const int> votes, int num_classes);

// 1 - (plurality count) / K over a non-empty vote multiset.
double disagreement(std::span<const int> votes);

struct SplitRatios {
  double train = 0.5;
  double dev = 0.25;
  double test = 0.25;
};

struct SplitBundle {
  std::vector<AnnotationRecord> train;
  std::vector<AnnotationRecord> dev;
  std::vector<AnnotationRecord> test;
  std::uint64_t seed = 0;

  // Item membership before unseen-annotator records were merged into train.
  std::vector<std::size_t> train_items;
  std::vector<std::size_t> dev_items;
  std::vector<std::size_t> test_items;
};

// Disagreement stratum of an item: four equal-width bins over [0, 0.5] and a
// fifth for anything above 0.5.
int disagreement_bin(double d);

SplitBundle stratified_split(const PerspectivistCorpus& corpus, std::uint64_t seed,
                             const SplitRatios& ratios = {});

}  // namespace hyperpersona
