#include "pcnn/formats.hpp"

#include <fstream>

#include "pcnn/binary_io.hpp"

namespace pcnn {
namespace {

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) throw std::invalid_argument(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

void expect_end(io::Reader& r) {
  if (!r.at_end()) throw FormatError("unexpected trailing bytes", r.offset());
}

}  // namespace

void write_mvi(const std::string& path, std::span<const MultiViewSample> samples, const ViewGeometry& g) {
  for (const auto& s : samples)
    if (s.views != g.views || s.height != g.height || s.width != g.width ||
        s.pixels.size() != g.views * g.height * g.width)
      throw std::invalid_argument("write_mvi: sample " + std::to_string(s.model_id) + " has inconsistent geometry");
  io::Writer w(path);
  w.magic("MVI1");
  w.u32(to_u32(samples.size(), "model count"));
  w.u32(to_u32(g.views, "N"));
  w.u32(to_u32(g.height, "H"));
  w.u32(to_u32(g.width, "W"));
  for (const auto& s : samples) {
    w.u32(s.label);
    w.u32(s.model_id);
    for (float p : s.pixels) w.f32(p);
  }
  w.close();
}

void write_mvi(const std::string& path, std::span<const MultiViewSample> samples) {
  ViewGeometry g;
  if (!samples.empty()) g = {samples[0].views, samples[0].height, samples[0].width};
  write_mvi(path, samples, g);
}

std::vector<MultiViewSample> load_mvi(const std::string& path, ViewGeometry* geometry) {
  io::Reader r(path);
  r.expect_magic("MVI1");
  const std::uint32_t count = r.u32("model count");
  ViewGeometry g;
  g.views = r.u32("N");
  g.height = r.u32("H");
  g.width = r.u32("W");
  if (geometry) *geometry = g;
  std::vector<MultiViewSample> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    MultiViewSample s;
    s.label = r.u32("label");
    s.model_id = r.u32("model id");
    s.views = g.views;
    s.height = g.height;
    s.width = g.width;
    s.pixels.resize(g.views * g.height * g.width);
    r.f32_block(s.pixels.data(), s.pixels.size(), "pixels");
    out.push_back(std::move(s));
  }
  expect_end(r);
  return out;
}

void write_pvf(const std::string& path, std::span<const PatchGridEntry> entries, const PatchGridGeometry& g) {
  for (const auto& e : entries)
    if (e.views != g.views || e.grid != g.grid || e.dim != g.dim ||
        e.values.size() != g.views * g.grid * g.grid * g.dim)
      throw std::invalid_argument("write_pvf: entry " + std::to_string(e.model_id) + " has inconsistent geometry");
  io::Writer w(path);
  w.magic("PVF1");
  w.u32(to_u32(entries.size(), "model count"));
  w.u32(to_u32(g.views, "N"));
  w.u32(to_u32(g.grid, "P"));
  w.u32(to_u32(g.dim, "D"));
  for (const auto& e : entries) {
    w.u32(e.label);
    w.u32(e.model_id);
    for (float v : e.values) w.f32(v);
  }
  w.close();
}

std::vector<PatchGridEntry> load_pvf(const std::string& path, PatchGridGeometry* geometry) {
  io::Reader r(path);
  r.expect_magic("PVF1");
  const std::uint32_t count = r.u32("model count");
  PatchGridGeometry g;
  g.views = r.u32("N");
  g.grid = r.u32("P");
  g.dim = r.u32("D");
  if (geometry) *geometry = g;
  std::vector<PatchGridEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    PatchGridEntry e;
    e.label = r.u32("label");
    e.model_id = r.u32("model id");
    e.views = g.views;
    e.grid = g.grid;
    e.dim = g.dim;
    e.values.resize(g.views * g.grid * g.grid * g.dim);
    r.f32_block(e.values.data(), e.values.size(), "patch features");
    out.push_back(std::move(e));
  }
  expect_end(r);
  return out;
}

void write_emb(const std::string& path, std::span<const EmbeddingRecord> records, std::size_t dim) {
  io::Writer w(path);
  w.magic("EMB1");
  w.u32(to_u32(records.size(), "model count"));
  w.u32(to_u32(dim, "dim"));
  for (const auto& rec : records) {
    if (rec.embedding.size() != dim)
      throw std::invalid_argument("write_emb: embedding of model " + std::to_string(rec.model_id) + " has wrong size");
    w.u32(rec.label);
    w.u32(rec.model_id);
    w.u32(rec.predicted_class);
    for (double v : rec.embedding) w.f32(static_cast<float>(v));
  }
  w.close();
}

std::vector<EmbeddingRecord> load_emb(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("EMB1");
  const std::uint32_t count = r.u32("model count");
  const std::uint32_t dim = r.u32("dim");
  std::vector<EmbeddingRecord> out;
  out.reserve(count);
  std::vector<float> buf(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.label = r.u32("label");
    rec.model_id = r.u32("model id");
    rec.predicted_class = r.u32("predicted class");
    r.f32_block(buf.data(), dim, "embedding");
    rec.embedding.assign(buf.begin(), buf.end());
    out.push_back(std::move(rec));
  }
  expect_end(r);
  return out;
}

std::string sniff_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string m(4, '\0');
  if (!in.read(m.data(), 4)) return {};
  return m;
}

}  // namespace pcnn
