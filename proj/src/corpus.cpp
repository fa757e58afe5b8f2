#include "hyperpersona/corpus.hpp"
#include "hyperpersona/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace hyperpersona {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(first, last - first + 1);
}

std::uint64_t pair_key(std::size_t item, std::size_t annotator) {
  return (static_cast<std::uint64_t>(item) << 32) ^ static_cast<std::uint64_t>(annotator);
}

std::string scalar_to_string(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  if (value.is_number_unsigned()) return std::to_string(value.get<unsigned long long>());
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  return value.dump();
}

}  // namespace

PerspectivistCorpus::PerspectivistCorpus(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 2) throw ContractError("corpus needs at least two classes");
}

std::optional<std::size_t> PerspectivistCorpus::find_item(const std::string& item_id) const {
  const auto it = item_index_.find(item_id);
  if (it == item_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> PerspectivistCorpus::find_annotator(const std::string& annotator_id) const {
  const auto it = annotator_index_.find(annotator_id);
  if (it == annotator_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t PerspectivistCorpus::add_item(const std::string& item_id, const std::string& text) {
  const std::string trimmed = trim(text);
  if (trimmed.empty()) throw SchemaError("item '" + item_id + "' has empty text");
  if (const auto found = find_item(item_id)) {
    if (items_[*found].text != trimmed) {
      throw IntegrityError("item '" + item_id + "' appears with two different texts");
    }
    return *found;
  }
  item_index_.emplace(item_id, items_.size());
  items_.push_back({item_id, trimmed});
  return items_.size() - 1;
}

std::size_t PerspectivistCorpus::add_annotator(const std::string& annotator_id) {
  if (const auto found = find_annotator(annotator_id)) return *found;
  annotator_index_.emplace(annotator_id, annotators_.size());
  annotators_.push_back(annotator_id);
  return annotators_.size() - 1;
}

void PerspectivistCorpus::add_record(std::size_t item, std::size_t annotator, int label) {
  if (item >= items_.size() || annotator >= annotators_.size()) {
    throw ContractError("record references an unregistered item or annotator");
  }
  if (label < 0 || label >= num_classes_) {
    throw SchemaError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes_) + ")");
  }
  const auto [it, inserted] = pair_index_.emplace(pair_key(item, annotator), records_.size());
  if (!inserted) {
    throw IntegrityError("duplicate annotation of item '" + items_[item].item_id +
                         "' by annotator '" + annotators_[annotator] + "'");
  }
  records_.push_back({item, annotator, label});
}

std::vector<std::vector<int>> PerspectivistCorpus::votes_by_item() const {
  std::vector<std::vector<int>> votes(items_.size());
  for (const auto& r : records_) votes[r.item].push_back(r.label);
  return votes;
}

FieldMap FieldMap::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open field map " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("field map " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("field map must be a JSON object");
  FieldMap map;
  auto read = [&](const char* key, std::string& slot) {
    if (doc.contains(key)) {
      if (!doc[key].is_string()) throw ConfigError(std::string("field map key '") + key + "' must be a string");
      slot = doc[key].get<std::string>();
    }
  };
  read("item_id", map.item_id);
  read("text", map.text);
  read("annotator_id", map.annotator_id);
  read("label", map.label);
  if (doc.contains("label_values")) {
    for (const auto& v : doc["label_values"]) map.label_values.push_back(scalar_to_string(v));
    map.num_classes = static_cast<int>(map.label_values.size());
  }
  if (doc.contains("num_classes")) map.num_classes = doc["num_classes"].get<int>();
  if (map.num_classes < 2) throw ConfigError("field map declares fewer than two classes");
  if (!map.label_values.empty() && static_cast<int>(map.label_values.size()) != map.num_classes) {
    throw ConfigError("label_values size disagrees with num_classes");
  }
  return map;
}

PerspectivistCorpus parse_jsonl(std::istream& in, const FieldMap& schema) {
  PerspectivistCorpus corpus(schema.num_classes);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!row.is_object()) throw ParseError("record is not a JSON object", line_no);

    auto field = [&](const std::string& name) -> const nlohmann::json& {
      const auto it = row.find(name);
      if (it == row.end() || it->is_null()) {
        throw SchemaError("line " + std::to_string(line_no) + ": missing field '" + name + "'");
      }
      return *it;
    };
    const std::string item_id = scalar_to_string(field(schema.item_id));
    const auto& text_field = field(schema.text);
    if (!text_field.is_string()) {
      throw SchemaError("line " + std::to_string(line_no) + ": field '" + schema.text + "' is not a string");
    }
    const std::string annotator_id = scalar_to_string(field(schema.annotator_id));
    const auto& label_field = field(schema.label);

    int label = -1;
    if (!schema.label_values.empty()) {
      const std::string raw = scalar_to_string(label_field);
      const auto it = std::find(schema.label_values.begin(), schema.label_values.end(), raw);
      if (it == schema.label_values.end()) {
        throw SchemaError("line " + std::to_string(line_no) + ": unknown label value '" + raw + "'");
      }
      label = static_cast<int>(it - schema.label_values.begin());
    } else {
      if (!label_field.is_number_integer()) {
        throw SchemaError("line " + std::to_string(line_no) + ": unknown label value '" +
                          scalar_to_string(label_field) + "'");
      }
      const long long raw = label_field.get<long long>();
      if (raw < 0 || raw >= schema.num_classes) {
        throw SchemaError("line " + std::to_string(line_no) + ": unknown label value '" +
                          std::to_string(raw) + "'");
      }
      label = static_cast<int>(raw);
    }

    try {
      const std::size_t item = corpus.add_item(item_id, text_field.get<std::string>());
      const std::size_t annotator = corpus.add_annotator(annotator_id);
      corpus.add_record(item, annotator, label);
    } catch (const IntegrityError& e) {
      throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

PerspectivistCorpus load_jsonl(const std::filesystem::path& path, const FieldMap& schema) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open corpus file " + path.string());
  return parse_jsonl(in, schema);
}

void write_jsonl(const PerspectivistCorpus& corpus, std::ostream& out) {
  for (const auto& r : corpus.records()) {
    nlohmann::ordered_json row;
    row["item_id"] = corpus.item_id(r.item);
    row["text"] = corpus.items()[r.item].text;
    row["annotator_id"] = corpus.annotator_id(r.annotator);
    row["label"] = r.label;
    out << row.dump() << '\n';
  }
}

int majority_vote(std::span<const int> votes, int num_classes) {
  if (votes.empty()) throw ContractError("majority_vote: empty vote set");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int v : votes) {
    if (v < 0 || v >= num_classes) throw ContractError("majority_vote: vote outside class range");
    ++counts[static_cast<std::size_t>(v)];
  }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::vector<int> majority_labels(const PerspectivistCorpus& corpus) {
  const auto votes = corpus.votes_by_item();
  std::vector<int> labels(votes.size());
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i].empty()) {
      throw ContractError("majority_labels: item '" + corpus.item_id(i) + "' has no annotations");
    }
    labels[i] = majority_vote(votes[i], corpus.num_classes());
  }
  return labels;
}

double disagreement(std::span<const int> votes) {
  if (votes.empty()) throw ContractError("disagreement: empty vote set");
  std::map<int, std::size_t> counts;
  std::size_t plurality = 0;
  for (int v : votes) plurality = std::max(plurality, ++counts[v]);
  return 1.0 - static_cast<double>(plurality) / static_cast<double>(votes.size());
}

int disagreement_bin(double d) {
  if (d > 0.5) return 4;
  return std::min(3, static_cast<int>(d / 0.125));
}

SplitBundle stratified_split(const PerspectivistCorpus& corpus, std::uint64_t seed,
                             const SplitRatios& ratios) {
  if (corpus.num_items() == 0 || corpus.records().empty()) {
    throw ContractError("stratified_split: empty corpus");
  }
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
    throw ContractError("stratified_split: ratios must be non-negative and sum to 1");
  }

  const auto votes = corpus.votes_by_item();
  std::array<std::vector<std::size_t>, 5> bins;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i].empty()) continue;
    bins[static_cast<std::size_t>(disagreement_bin(disagreement(votes[i])))].push_back(i);
  }

  std::vector<std::vector<std::size_t>> buckets;
  for (auto& bin : bins) {
    if (!bin.empty()) buckets.push_back(std::move(bin));
  }
  // Buckets smaller than three items are folded into a neighbour until every
  // bucket can be split three ways (or only one bucket is left).
  for (std::size_t b = 0; b < buckets.size() && buckets.size() > 1;) {
    if (buckets[b].size() >= 3) {
      ++b;
      continue;
    }
    const std::size_t into = b + 1 < buckets.size() ? b + 1 : b - 1;
    std::clog << "warning: disagreement stratum with " << buckets[b].size()
              << " item(s) merged into a neighbouring stratum\n";
    auto& target = buckets[into];
    target.insert(target.end(), buckets[b].begin(), buckets[b].end());
    std::sort(target.begin(), target.end());
    buckets.erase(buckets.begin() + static_cast<std::ptrdiff_t>(b));
    if (into < b) b = into;
  }

  std::vector<int> part(corpus.num_items(), -1);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    auto items = buckets[b];
    Rng rng(derive_seed(seed, 0x5b117, b));
    rng.shuffle(items);
    const auto n = static_cast<double>(items.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train));
    const auto n_dev = std::min(items.size() - n_train,
                                static_cast<std::size_t>(std::llround(n * ratios.dev)));
    for (std::size_t k = 0; k < items.size(); ++k) {
      part[items[k]] = k < n_train ? 0 : (k < n_train + n_dev ? 1 : 2);
    }
  }

  SplitBundle split;
  split.seed = seed;
  for (std::size_t i = 0; i < part.size(); ++i) {
    if (part[i] == 0) split.train_items.push_back(i);
    if (part[i] == 1) split.dev_items.push_back(i);
    if (part[i] == 2) split.test_items.push_back(i);
  }

  std::vector<bool> in_train(corpus.num_annotators(), false);
  for (const auto& r : corpus.records()) {
    if (part[r.item] == 0) in_train[r.annotator] = true;
  }
  for (const auto& r : corpus.records()) {
    if (part[r.item] == 0 || !in_train[r.annotator]) {
      split.train.push_back(r);
    } else if (part[r.item] == 1) {
      split.dev.push_back(r);
    } else {
      split.test.push_back(r);
    }
  }
  return split;
}

}  // namespace hyperpersona
