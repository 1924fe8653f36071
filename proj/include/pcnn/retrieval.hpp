#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcnn/formats.hpp"

namespace pcnn {

enum class DistanceMetric { Cosine, Euclidean };

DistanceMetric parse_metric(const std::string& name);  // cosine | euclidean
std::string metric_name(DistanceMetric metric);

/// Raised when no query has a relevant gallery item, leaving mAP undefined.
class UndefinedMetricError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Cosine distance is 1 - cos(a, b) with norms floored at 1e-8.
double embedding_distance(std::span<const double> a, std::span<const double> b, DistanceMetric metric);

struct RankedItem {
  std::size_t index = 0;  // position in the gallery span
  std::uint32_t gallery_id = 0;
  double distance = 0.0;
  bool relevant = false;
};

struct RankedList {
  std::uint32_t query_id = 0;
  std::vector<RankedItem> items;
};

/// Ascending distance, ties in gallery order. With rerank, items whose
/// predicted class equals the query's come first; each partition keeps its
/// distance order. The caller keeps the query out of the gallery.
RankedList rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery, DistanceMetric metric,
                bool rerank);

/// Leave-one-out: record `query` against every other record of the set.
RankedList rank_query(std::span<const EmbeddingRecord> records, std::size_t query, DistanceMetric metric, bool rerank);

/// (1/R) sum over hit ranks r of precision@r; nullopt when nothing is relevant.
std::optional<double> average_precision(std::span<const bool> relevant);

inline constexpr std::size_t kPrLevels = 101;

/// Interpolated precision at recall i/100, i = 0..100: the best precision at
/// any rank whose recall is at least i/100. nullopt when nothing is relevant.
std::optional<std::vector<double>> interpolated_pr(std::span<const bool> relevant);

struct RetrievalMetrics {
  double map = 0.0;
  std::size_t queries = 0;   // queries with at least one relevant item
  std::size_t excluded = 0;  // queries without
  std::vector<double> precision;  // kPrLevels, averaged over valid queries
};

/// Every record serves once as a query against all others.
/// Throws std::invalid_argument for fewer than 2 records and
/// UndefinedMetricError when no query is valid.
RetrievalMetrics map_and_pr(std::span<const EmbeddingRecord> records, DistanceMetric metric, bool rerank,
                            std::vector<RankedList>* rankings = nullptr);

/// query_id,rank,gallery_id,distance,relevant (rank is 1-based).
void write_ranking_csv(const std::string& path, std::span<const RankedList> rankings);
/// recall,precision, kPrLevels rows.
void write_pr_csv(const std::string& path, const RetrievalMetrics& metrics);
/// {"map": ..., "queries": ..., "excluded": ...}
void write_metrics_json(const std::string& path, const RetrievalMetrics& metrics);

}  // namespace pcnn
