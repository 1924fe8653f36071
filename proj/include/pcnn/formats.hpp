#pragma once

// Binary interchange files. All integers u32 little-endian, payloads float32 LE.
//   MVI1: num_models, N, H, W; per model: label, model_id, N*H*W pixels (view-major, row-major)
//   PVF1: num_models, N, P, D; per model: label, model_id, N*P*P*D features (view, row, col, channel)
//   EMB1: num_models, dim; per model: label, model_id, predicted_class, dim values

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcnn/dataset.hpp"

namespace pcnn {

struct ViewGeometry {
  std::size_t views = 0, height = 0, width = 0;
};

/// Samples must share the given geometry (also used when the list is empty).
void write_mvi(const std::string& path, std::span<const MultiViewSample> samples, const ViewGeometry& geometry);
void write_mvi(const std::string& path, std::span<const MultiViewSample> samples);
std::vector<MultiViewSample> load_mvi(const std::string& path, ViewGeometry* geometry = nullptr);

/// Externally computed patch grid for one model.
struct PatchGridEntry {
  std::uint32_t label = 0;
  std::uint32_t model_id = 0;
  std::size_t views = 0, grid = 0, dim = 0;
  std::vector<float> values;  // views x grid x grid x dim

  bool operator==(const PatchGridEntry&) const = default;
};

struct PatchGridGeometry {
  std::size_t views = 0, grid = 0, dim = 0;
  std::size_t patches_per_model() const { return grid * grid * views; }
};

void write_pvf(const std::string& path, std::span<const PatchGridEntry> entries, const PatchGridGeometry& geometry);
std::vector<PatchGridEntry> load_pvf(const std::string& path, PatchGridGeometry* geometry = nullptr);

struct EmbeddingRecord {
  std::uint32_t model_id = 0;
  std::uint32_t label = 0;
  std::uint32_t predicted_class = 0;
  std::vector<double> embedding;

  bool operator==(const EmbeddingRecord&) const = default;
};

/// Embedding values are stored as float32, so a round trip rounds them.
void write_emb(const std::string& path, std::span<const EmbeddingRecord> records, std::size_t dim);
std::vector<EmbeddingRecord> load_emb(const std::string& path);

/// Reads the 4-byte magic of a file ("MVI1", "PVF1", ...); empty string if unreadable.
std::string sniff_magic(const std::string& path);

}  // namespace pcnn
