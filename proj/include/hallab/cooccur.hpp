#pragma once

// Entity co-occurrence statistics used as a proxy for spurious-correlation
// strength: an entity -> article inverted index, Jaccard overlap between the
// entities of a question and of the model's consensus answer, equal-count
// bucketing by overlap, and per-bucket confidence / consistency aggregates.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hallab::cooccur {

// Case-folds ASCII letters, trims, and collapses internal whitespace.
std::string normalize_entity(std::string_view s);

class ArticleIndex {
 public:
  ArticleIndex() = default;

  // Sorted, deduplicated article ids; empty for unknown entities.
  std::span<const std::uint64_t> articles(std::string_view entity) const;

  std::size_t num_entities() const { return entities_.size(); }
  const std::vector<std::string>& entities() const { return entities_; }

  // Flat binary layout: magic, counts, entity offset table, posting offset
  // table, entity bytes, postings. Loading does no parsing beyond reading
  // the arrays back.
  void save(std::ostream& os) const;
  static ArticleIndex load(std::istream& is);

  friend class IndexBuilder;
  friend bool operator==(const ArticleIndex&, const ArticleIndex&) = default;

 private:
  std::vector<std::string> entities_;                 // sorted, normalized
  std::vector<std::vector<std::uint64_t>> postings_;  // parallel to entities_
};

class IndexBuilder {
 public:
  void add(std::string_view entity, std::uint64_t article_id);
  // Parses one "entity<TAB>article_id" line. Returns false (and counts it)
  // when the line is malformed.
  bool add_line(std::string_view line);
  ArticleIndex finish();

  std::size_t lines_seen() const { return lines_; }
  std::size_t malformed() const { return malformed_; }

 private:
  std::vector<std::pair<std::string, std::uint64_t>> pairs_;
  std::size_t lines_ = 0;
  std::size_t malformed_ = 0;
};

struct BuildSummary {
  ArticleIndex index;
  std::size_t lines = 0;
  std::size_t malformed = 0;
};

BuildSummary build_index(std::istream& tsv);
ArticleIndex build_index(std::span<const std::pair<std::string, std::uint64_t>> pairs);

// |A(e1) & A(e2)| / |A(e1) | A(e2)|, 0 when both are empty.
double jaccard(const ArticleIndex& index, std::string_view e1, std::string_view e2);

struct PairOverlap {
  std::string question_entity;
  std::string answer_entity;
  double jaccard = 0.0;
};

std::vector<PairOverlap> pair_overlaps(const ArticleIndex& index,
                                       std::span<const std::string> question_entities,
                                       std::span<const std::string> answer_entities);
// Max pairwise Jaccard; 0 if either side is empty.
double pair_overlap(const ArticleIndex& index, std::span<const std::string> question_entities,
                    std::span<const std::string> answer_entities);

// Lower-cases, removes ASCII punctuation, collapses whitespace.
std::string normalize_answer(std::string_view s);

using AnswerKey = std::function<std::string(std::string_view)>;

struct Consensus {
  std::string answer;  // first generation in the modal class, verbatim
  double self_consistency = 0.0;
  std::size_t mode_count = 0;
};

// Majority vote over generations under `key` (default normalize_answer);
// ties go to the class that appeared first.
Consensus consensus_and_consistency(std::span<const std::string> generations,
                                    const AnswerKey& key = {});

struct SampleInput {
  std::string id;
  std::vector<std::string> question_entities;
  std::vector<std::string> generations;
  std::optional<double> confidence;  // self-reported, 1..5
  std::string gold;
  // Entities of the consensus answer; when absent the answer itself is used.
  std::optional<std::vector<std::string>> answer_entities;
};

struct SampleStats {
  std::string id;
  std::vector<std::string> question_entities;
  std::vector<std::string> answer_entities;
  std::vector<PairOverlap> pairs;
  double jaccard = 0.0;
  std::string consensus;
  double self_consistency = 0.0;
  std::optional<double> self_confidence;
  bool is_hallucination = false;
};

SampleStats analyze_sample(const ArticleIndex& index, const SampleInput& sample,
                           const AnswerKey& key = {});

SampleInput sample_from_json(const nlohmann::json& j);

// Equal-count buckets T1..Tk by descending Jaccard. Samples sharing a Jaccard
// value land in the bucket of the first position of their tie group, so
// all-equal input puts everything in T1. Throws if fewer samples than buckets.
std::vector<std::vector<SampleStats>> bucketize(std::span<const SampleStats> samples, int k = 5);

struct BucketSummary {
  int bucket = 0;  // 1-based, T1 = highest overlap
  std::size_t n = 0;
  std::optional<double> jaccard_min, jaccard_max;
  std::optional<double> mean_self_confidence;
  std::optional<double> mean_self_consistency;
  std::optional<double> hallucination_rate;
  std::optional<double> auroc_self_consistency;  // score = 1 - consistency
  std::optional<double> auroc_self_confidence;   // score = -confidence
};

struct BucketReport {
  std::vector<BucketSummary> buckets;
  // Non-decreasing from T5 to T1 over the buckets where the mean is present.
  bool confidence_rises = false;
  bool consistency_rises = false;
};

BucketReport bucket_report(const std::vector<std::vector<SampleStats>>& buckets);

void write_bucket_csv(std::ostream& os, const BucketReport& report);
nlohmann::json to_json(const BucketReport& report);

}  // namespace hallab::cooccur
