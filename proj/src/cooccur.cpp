#include "hallab/cooccur.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cstring>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hallab/error.hpp"
#include "hallab/io.hpp"
#include "hallab/metrics.hpp"

namespace hallab::cooccur {

using json = nlohmann::json;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string collapse(std::string_view s, bool drop_punct) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (drop_punct && std::ispunct(static_cast<unsigned char>(c))) continue;
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

constexpr char kMagic[8] = {'H', 'L', 'I', 'D', 'X', '0', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated index file");
  return v;
}

}  // namespace

std::string normalize_entity(std::string_view s) { return collapse(s, false); }

std::string normalize_answer(std::string_view s) { return collapse(s, true); }

std::span<const std::uint64_t> ArticleIndex::articles(std::string_view entity) const {
  const std::string key = normalize_entity(entity);
  const auto it = std::lower_bound(entities_.begin(), entities_.end(), key);
  if (it == entities_.end() || *it != key) return {};
  return postings_[static_cast<std::size_t>(it - entities_.begin())];
}

void ArticleIndex::save(std::ostream& os) const {
  os.write(kMagic, sizeof(kMagic));
  const std::uint64_t n = entities_.size();
  std::uint64_t total_chars = 0, total_posts = 0;
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    total_chars += entities_[i].size();
    total_posts += postings_[i].size();
  }
  put(os, n);
  put(os, total_chars);
  put(os, total_posts);
  std::uint64_t off = 0;
  for (const auto& e : entities_) {
    put(os, off);
    off += e.size();
  }
  put(os, off);
  off = 0;
  for (const auto& p : postings_) {
    put(os, off);
    off += p.size();
  }
  put(os, off);
  for (const auto& e : entities_) os.write(e.data(), static_cast<std::streamsize>(e.size()));
  for (const auto& p : postings_)
    os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(std::uint64_t)));
  if (!os) throw Error("failed writing index");
}

ArticleIndex ArticleIndex::load(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not an article index file");
  const auto n = get<std::uint64_t>(is);
  const auto total_chars = get<std::uint64_t>(is);
  const auto total_posts = get<std::uint64_t>(is);
  if (n > (1ull << 40) || total_chars > (1ull << 40) || total_posts > (1ull << 40))
    throw FormatError("implausible index header");
  std::vector<std::uint64_t> eoff(n + 1), poff(n + 1);
  for (auto& v : eoff) v = get<std::uint64_t>(is);
  for (auto& v : poff) v = get<std::uint64_t>(is);
  if (eoff.back() != total_chars || poff.back() != total_posts) throw FormatError("index offset tables are inconsistent");
  for (std::size_t i = 0; i < n; ++i)
    if (eoff[i] > eoff[i + 1] || poff[i] > poff[i + 1]) throw FormatError("index offsets are not monotone");
  std::string chars(total_chars, '\0');
  if (!is.read(chars.data(), static_cast<std::streamsize>(total_chars))) throw FormatError("truncated index file");
  std::vector<std::uint64_t> posts(total_posts);
  if (!is.read(reinterpret_cast<char*>(posts.data()), static_cast<std::streamsize>(total_posts * sizeof(std::uint64_t))))
    throw FormatError("truncated index file");

  ArticleIndex idx;
  idx.entities_.reserve(n);
  idx.postings_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx.entities_.emplace_back(chars.substr(eoff[i], eoff[i + 1] - eoff[i]));
    idx.postings_.emplace_back(posts.begin() + static_cast<std::ptrdiff_t>(poff[i]),
                               posts.begin() + static_cast<std::ptrdiff_t>(poff[i + 1]));
  }
  if (!std::is_sorted(idx.entities_.begin(), idx.entities_.end())) throw FormatError("index entities are not sorted");
  return idx;
}

void IndexBuilder::add(std::string_view entity, std::uint64_t article_id) {
  std::string key = normalize_entity(entity);
  if (key.empty()) throw InvalidArgument("empty entity");
  pairs_.emplace_back(std::move(key), article_id);
}

bool IndexBuilder::add_line(std::string_view line) {
  ++lines_;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto tab = line.rfind('\t');
  if (tab == std::string_view::npos) {
    ++malformed_;
    return false;
  }
  const std::string key = normalize_entity(line.substr(0, tab));
  std::string_view id_text = line.substr(tab + 1);
  while (!id_text.empty() && is_space(id_text.back())) id_text.remove_suffix(1);
  while (!id_text.empty() && is_space(id_text.front())) id_text.remove_prefix(1);
  std::uint64_t id = 0;
  const auto res = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
  if (key.empty() || id_text.empty() || res.ec != std::errc() || res.ptr != id_text.data() + id_text.size()) {
    ++malformed_;
    return false;
  }
  pairs_.emplace_back(key, id);
  return true;
}

ArticleIndex IndexBuilder::finish() {
  std::sort(pairs_.begin(), pairs_.end());
  pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());
  ArticleIndex idx;
  for (auto& [entity, id] : pairs_) {
    if (idx.entities_.empty() || idx.entities_.back() != entity) {
      idx.entities_.push_back(entity);
      idx.postings_.emplace_back();
    }
    idx.postings_.back().push_back(id);
  }
  pairs_.clear();
  return idx;
}

BuildSummary build_index(std::istream& tsv) {
  IndexBuilder b;
  std::string line;
  while (std::getline(tsv, line)) {
    if (line.empty() || line == "\r") continue;
    b.add_line(line);
  }
  BuildSummary out;
  out.lines = b.lines_seen();
  out.malformed = b.malformed();
  out.index = b.finish();
  return out;
}

ArticleIndex build_index(std::span<const std::pair<std::string, std::uint64_t>> pairs) {
  IndexBuilder b;
  for (const auto& [e, id] : pairs) b.add(e, id);
  return b.finish();
}

double jaccard(const ArticleIndex& index, std::string_view e1, std::string_view e2) {
  const auto a = index.articles(e1);
  const auto b = index.articles(e2);
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<PairOverlap> pair_overlaps(const ArticleIndex& index, std::span<const std::string> question_entities,
                                       std::span<const std::string> answer_entities) {
  std::vector<PairOverlap> out;
  out.reserve(question_entities.size() * answer_entities.size());
  for (const auto& q : question_entities)
    for (const auto& a : answer_entities) out.push_back({q, a, jaccard(index, q, a)});
  return out;
}

double pair_overlap(const ArticleIndex& index, std::span<const std::string> question_entities,
                    std::span<const std::string> answer_entities) {
  double best = 0.0;
  for (const auto& p : pair_overlaps(index, question_entities, answer_entities)) best = std::max(best, p.jaccard);
  return best;
}

Consensus consensus_and_consistency(std::span<const std::string> generations, const AnswerKey& key) {
  if (generations.empty()) throw InvalidArgument("self-consistency needs at least one generation");
  std::vector<std::string> keys;
  keys.reserve(generations.size());
  for (const auto& g : generations) keys.push_back(key ? key(g) : normalize_answer(g));

  std::unordered_map<std::string, std::size_t> count;
  std::unordered_map<std::string, std::size_t> first;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    ++count[keys[i]];
    first.try_emplace(keys[i], i);
  }
  std::size_t best = 0;
  std::size_t best_first = 0;
  for (const auto& [k, c] : count) {
    const std::size_t f = first[k];
    if (c > best || (c == best && f < best_first)) {
      best = c;
      best_first = f;
    }
  }
  return {generations[best_first], static_cast<double>(best) / static_cast<double>(generations.size()), best};
}

SampleStats analyze_sample(const ArticleIndex& index, const SampleInput& sample, const AnswerKey& key) {
  SampleStats s;
  s.id = sample.id;
  s.question_entities = sample.question_entities;
  const Consensus c = consensus_and_consistency(sample.generations, key);
  s.consensus = c.answer;
  s.self_consistency = c.self_consistency;
  s.self_confidence = sample.confidence;
  s.answer_entities = sample.answer_entities ? *sample.answer_entities : std::vector<std::string>{c.answer};
  s.pairs = pair_overlaps(index, s.question_entities, s.answer_entities);
  for (const auto& p : s.pairs) s.jaccard = std::max(s.jaccard, p.jaccard);
  const auto k = key ? key : AnswerKey(normalize_answer);
  s.is_hallucination = k(c.answer) != k(sample.gold);
  return s;
}

SampleInput sample_from_json(const json& j) {
  try {
    SampleInput s;
    s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    s.question_entities = j.at("question_entities").get<std::vector<std::string>>();
    s.generations = j.at("generations").get<std::vector<std::string>>();
    if (s.generations.empty()) throw FormatError("sample '" + s.id + "' has no generations");
    s.gold = j.at("gold").get<std::string>();
    if (j.contains("confidence") && !j.at("confidence").is_null()) {
      const double c = j.at("confidence").get<double>();
      if (c < 1.0 || c > 5.0) throw FormatError("sample '" + s.id + "' confidence outside 1..5");
      s.confidence = c;
    }
    if (j.contains("answer_entities") && !j.at("answer_entities").is_null())
      s.answer_entities = j.at("answer_entities").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed sample: ") + e.what());
  }
}

std::vector<std::vector<SampleStats>> bucketize(std::span<const SampleStats> samples, int k) {
  if (k < 1) throw InvalidArgument("bucket count must be positive");
  if (samples.size() < static_cast<std::size_t>(k))
    throw InvalidArgument("need at least " + std::to_string(k) + " samples to form " + std::to_string(k) + " buckets");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].jaccard > samples[b].jaccard; });
  const std::size_t n = samples.size();
  std::vector<std::vector<SampleStats>> out(static_cast<std::size_t>(k));
  std::size_t group_bucket = 0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (pos == 0 || samples[order[pos]].jaccard != samples[order[pos - 1]].jaccard)
      group_bucket = pos * static_cast<std::size_t>(k) / n;
    out[group_bucket].push_back(samples[order[pos]]);
  }
  return out;
}

BucketReport bucket_report(const std::vector<std::vector<SampleStats>>& buckets) {
  BucketReport r;
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const auto& items = buckets[b];
    BucketSummary s;
    s.bucket = static_cast<int>(b + 1);
    s.n = items.size();
    if (!items.empty()) {
      double lo = items.front().jaccard, hi = lo, halluc = 0.0;
      std::vector<double> cons_v, conf_v;
      for (const auto& x : items) {
        lo = std::min(lo, x.jaccard);
        hi = std::max(hi, x.jaccard);
        cons_v.push_back(x.self_consistency);
        halluc += x.is_hallucination ? 1.0 : 0.0;
        if (x.self_confidence) conf_v.push_back(*x.self_confidence);
      }
      // summed in sorted order so the means do not depend on sample order
      const auto sorted_sum = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        return std::accumulate(v.begin(), v.end(), 0.0);
      };
      const double cons = sorted_sum(cons_v), conf = sorted_sum(conf_v);
      const std::size_t nconf = conf_v.size();
      const double n = static_cast<double>(items.size());
      s.jaccard_min = lo;
      s.jaccard_max = hi;
      s.mean_self_consistency = cons / n;
      s.hallucination_rate = halluc / n;
      if (nconf) s.mean_self_confidence = conf / static_cast<double>(nconf);

      std::vector<double> sc;
      std::vector<char> lab;
      for (const auto& x : items) {
        sc.push_back(1.0 - x.self_consistency);
        lab.push_back(x.is_hallucination);
      }
      const auto npos = std::count(lab.begin(), lab.end(), 1);
      const bool both = npos > 0 && npos < static_cast<std::ptrdiff_t>(lab.size());
      if (both) s.auroc_self_consistency = detect::auroc(sc, lab);
      if (nconf == items.size() && both) {
        std::vector<double> cf;
        for (const auto& x : items) cf.push_back(-*x.self_confidence);
        s.auroc_self_confidence = detect::auroc(cf, lab);
      }
    }
    r.buckets.push_back(s);
  }
  auto rises = [&](auto field) {
    std::optional<double> prev;
    for (auto it = r.buckets.rbegin(); it != r.buckets.rend(); ++it) {
      const auto& v = (*it).*field;
      if (!v) continue;
      if (prev && *v < *prev) return false;
      prev = v;
    }
    return prev.has_value();
  };
  r.confidence_rises = rises(&BucketSummary::mean_self_confidence);
  r.consistency_rises = rises(&BucketSummary::mean_self_consistency);
  return r;
}

void write_bucket_csv(std::ostream& os, const BucketReport& report) {
  os << io::csv_row({"bucket", "n", "jaccard_min", "jaccard_max", "mean_self_confidence", "mean_self_consistency",
                     "hallucination_rate", "auroc_self_consistency", "auroc_self_confidence"});
  for (const auto& b : report.buckets)
    os << io::csv_row({"T" + std::to_string(b.bucket), std::to_string(b.n), io::format_optional(b.jaccard_min),
                       io::format_optional(b.jaccard_max), io::format_optional(b.mean_self_confidence),
                       io::format_optional(b.mean_self_consistency), io::format_optional(b.hallucination_rate),
                       io::format_optional(b.auroc_self_consistency), io::format_optional(b.auroc_self_confidence)});
}

json to_json(const BucketReport& report) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json buckets = json::array();
  for (const auto& b : report.buckets)
    buckets.push_back({{"bucket", "T" + std::to_string(b.bucket)},
                       {"n", b.n},
                       {"jaccard_min", opt(b.jaccard_min)},
                       {"jaccard_max", opt(b.jaccard_max)},
                       {"mean_self_confidence", opt(b.mean_self_confidence)},
                       {"mean_self_consistency", opt(b.mean_self_consistency)},
                       {"hallucination_rate", opt(b.hallucination_rate)},
                       {"auroc_self_consistency", opt(b.auroc_self_consistency)},
                       {"auroc_self_confidence", opt(b.auroc_self_confidence)}});
  return {{"buckets", buckets},
          {"confidence_rises", report.confidence_rises},
          {"consistency_rises", report.consistency_rises}};
}

}  // namespace hallab::cooccur
