#include "pcnn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "pcnn/error.hpp"
#include "pcnn/kernels.hpp"

namespace pcnn {

DistanceMetric parse_metric(const std::string& name) {
  if (name == "cosine") return DistanceMetric::Cosine;
  if (name == "euclidean") return DistanceMetric::Euclidean;
  throw ConfigError("unknown metric '" + name + "' (expected cosine or euclidean)");
}

std::string metric_name(DistanceMetric metric) { return metric == DistanceMetric::Cosine ? "cosine" : "euclidean"; }

double embedding_distance(std::span<const double> a, std::span<const double> b, DistanceMetric metric) {
  if (a.size() != b.size())
    throw DimensionError("embedding_distance: dimensions " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  const auto& k = kernels::active();
  if (metric == DistanceMetric::Euclidean) return std::sqrt(k.squared_distance(a.data(), b.data(), a.size()));
  const double na = std::max(std::sqrt(k.dot(a.data(), a.data(), a.size())), 1e-8);
  const double nb = std::max(std::sqrt(k.dot(b.data(), b.data(), b.size())), 1e-8);
  return 1.0 - k.dot(a.data(), b.data(), a.size()) / (na * nb);
}

RankedList rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery, DistanceMetric metric,
                bool rerank) {
  if (gallery.empty()) throw std::invalid_argument("rank: empty gallery");
  RankedList out;
  out.query_id = query.model_id;
  out.items.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i)
    out.items.push_back({i, gallery[i].model_id, embedding_distance(query.embedding, gallery[i].embedding, metric),
                         gallery[i].label == query.label});
  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const RankedItem& a, const RankedItem& b) { return a.distance < b.distance; });
  if (rerank)
    std::stable_partition(out.items.begin(), out.items.end(), [&](const RankedItem& it) {
      return gallery[it.index].predicted_class == query.predicted_class;
    });
  return out;
}

RankedList rank_query(std::span<const EmbeddingRecord> records, std::size_t query, DistanceMetric metric, bool rerank) {
  std::vector<EmbeddingRecord> gallery;
  std::vector<std::size_t> source;
  gallery.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    if (i != query) {
      gallery.push_back(records[i]);
      source.push_back(i);
    }
  RankedList r = rank(records[query], gallery, metric, rerank);
  for (RankedItem& it : r.items) it.index = source[it.index];
  return r;
}

namespace {

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

// Correctly rounded p / q for 0 < p <= q < 2^127.
double ratio_to_double(u128 p, u128 q) {
  if (q < (u128(1) << 53)) return static_cast<double>(p) / static_cast<double>(q);  // one IEEE rounding
  if (p == q) return 1.0;
  // Long division until 55 significant quotient bits are known.
  std::uint64_t mant = 0;
  int bits = 0, exponent = 0;
  u128 r = p;
  while (bits < 55) {
    r <<= 1;
    --exponent;
    const bool bit = r >= q;
    if (bit) r -= q;
    if (bits > 0 || bit) {
      mant = (mant << 1) | static_cast<std::uint64_t>(bit);
      ++bits;
    }
  }
  std::uint64_t m = mant >> 2;
  const bool guard = (mant >> 1) & 1u;
  const bool sticky = (mant & 1u) != 0 || r != 0;
  if (guard && (sticky || (m & 1u))) ++m;  // round half to even
  return std::ldexp(static_cast<double>(m), exponent + 2);
}

}  // namespace

// The sum of precisions is kept as an exact fraction so the result is the
// correctly rounded value of the definition. Very long rankings whose
// denominators would overflow fall back to extended-precision summation.
std::optional<double> average_precision(std::span<const bool> relevant) {
  constexpr u128 kLimit = u128(1) << 96;
  u128 num = 0, den = 1;
  long double approx = 0.0L;
  bool exact = true;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevant.size(); ++r) {
    if (!relevant[r]) continue;
    ++hits;
    const u128 rank = r + 1;
    approx += static_cast<long double>(hits) / static_cast<long double>(rank);
    if (!exact) continue;
    const u128 g = gcd128(den, rank);
    if (hits >= (std::size_t{1} << 30) || den / g > kLimit / rank) {
      exact = false;
      continue;
    }
    num = num * (rank / g) + u128(hits) * (den / g);
    den = den / g * rank;
    const u128 h = gcd128(num, den);
    num /= h;
    den /= h;
  }
  if (hits == 0) return std::nullopt;
  if (!exact) return static_cast<double>(approx / static_cast<long double>(hits));
  const u128 g = gcd128(num, hits);
  return ratio_to_double(num / g, den * (hits / g));
}

std::optional<std::vector<double>> interpolated_pr(std::span<const bool> relevant) {
  const std::size_t R = static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
  if (R == 0) return std::nullopt;
  std::vector<double> out(kPrLevels, 0.0);
  // Walk ranks backwards keeping the best precision seen at recall >= the current one.
  std::vector<double> best_from(relevant.size() + 1, 0.0);
  std::vector<std::size_t> hits_at(relevant.size(), 0);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevant.size(); ++r) {
    hits += relevant[r] ? 1 : 0;
    hits_at[r] = hits;
  }
  for (std::size_t r = relevant.size(); r-- > 0;)
    best_from[r] = std::max(best_from[r + 1], static_cast<double>(hits_at[r]) / static_cast<double>(r + 1));
  std::size_t r = 0;
  for (std::size_t level = 0; level < kPrLevels; ++level) {
    // First rank whose recall hits_at[r] / R reaches level / 100.
    while (r < relevant.size() && hits_at[r] * (kPrLevels - 1) < level * R) ++r;
    out[level] = r < relevant.size() ? best_from[r] : 0.0;
  }
  return out;
}

RetrievalMetrics map_and_pr(std::span<const EmbeddingRecord> records, DistanceMetric metric, bool rerank,
                            std::vector<RankedList>* rankings) {
  if (records.size() < 2) throw std::invalid_argument("map_and_pr: need at least 2 models");
  RetrievalMetrics m;
  m.precision.assign(kPrLevels, 0.0);
  double ap_sum = 0.0;
  if (rankings) rankings->clear();
  for (std::size_t q = 0; q < records.size(); ++q) {
    RankedList list = rank_query(records, q, metric, rerank);
    const std::size_t n = list.items.size();
    std::unique_ptr<bool[]> rel(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) rel[i] = list.items[i].relevant;
    std::span<const bool> bits(rel.get(), n);
    if (auto ap = average_precision(bits)) {
      ++m.queries;
      ap_sum += *ap;
      const auto pr = interpolated_pr(bits);
      for (std::size_t i = 0; i < kPrLevels; ++i) m.precision[i] += (*pr)[i];
    } else {
      ++m.excluded;
    }
    if (rankings) rankings->push_back(std::move(list));
  }
  if (m.queries == 0) throw UndefinedMetricError("mAP undefined: no query has a relevant gallery item");
  m.map = ap_sum / static_cast<double>(m.queries);
  for (double& p : m.precision) p /= static_cast<double>(m.queries);
  return m;
}

void write_ranking_csv(const std::string& path, std::span<const RankedList> rankings) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write ranking '" + path + "'");
  std::fprintf(f, "query_id,rank,gallery_id,distance,relevant\n");
  for (const RankedList& list : rankings)
    for (std::size_t r = 0; r < list.items.size(); ++r) {
      const RankedItem& it = list.items[r];
      std::fprintf(f, "%u,%zu,%u,%.10g,%d\n", list.query_id, r + 1, it.gallery_id, it.distance, it.relevant ? 1 : 0);
    }
  if (std::fclose(f) != 0) throw std::runtime_error("failed writing ranking '" + path + "'");
}

void write_pr_csv(const std::string& path, const RetrievalMetrics& metrics) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write PR curve '" + path + "'");
  std::fprintf(f, "recall,precision\n");
  for (std::size_t i = 0; i < metrics.precision.size(); ++i)
    std::fprintf(f, "%.2f,%.10f\n", static_cast<double>(i) / static_cast<double>(kPrLevels - 1), metrics.precision[i]);
  if (std::fclose(f) != 0) throw std::runtime_error("failed writing PR curve '" + path + "'");
}

void write_metrics_json(const std::string& path, const RetrievalMetrics& metrics) {
  nlohmann::ordered_json j;
  j["map"] = metrics.map;
  j["queries"] = metrics.queries;
  j["excluded"] = metrics.excluded;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace pcnn
