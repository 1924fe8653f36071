#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "pcnn/backbone.hpp"
#include "pcnn/error.hpp"

using namespace pcnn;

namespace {

MultiViewSample random_sample(std::mt19937_64& rng, std::size_t views, std::size_t res) {
  MultiViewSample s;
  s.views = views, s.height = res, s.width = res;
  s.pixels.resize(views * res * res);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& p : s.pixels) p = u(rng);
  return s;
}

}  // namespace

TEST(BackboneTest, DeskGeometry) {
  std::mt19937_64 init(1);
  Backbone bb(BackboneConfig{3, 32, 8, 0.2}, init);
  std::mt19937_64 rng(2);
  PatchSet ps = extract_patches(bb, random_sample(rng, 6, 32), Mode::Train);
  EXPECT_EQ(ps.layout.grid, 4u);
  EXPECT_EQ(ps.layout.patches(), 96u);
  EXPECT_EQ(ps.features.shape(), (Shape{96, 32}));
  EXPECT_EQ(ps.coords.size(), 96u);
}

TEST(BackboneTest, PaperGeometry) {
  std::mt19937_64 init(1);
  Backbone bb(BackboneConfig{5, 512, 8, 0.2}, init);
  EXPECT_EQ(bb.grid_for(224), 7u);
  MultiViewSample s;
  s.views = 12, s.height = 224, s.width = 224;
  s.pixels.assign(12 * 224 * 224, 0.5f);
  PatchSet ps = extract_patches(bb, s, Mode::Eval);
  EXPECT_EQ(ps.layout.grid, 7u);
  EXPECT_EQ(ps.features.shape(), (Shape{588, 512}));
}

TEST(BackboneTest, IndivisibleResolution) {
  std::mt19937_64 init(1);
  Backbone bb(BackboneConfig{3, 32, 8, 0.2}, init);
  EXPECT_THROW(bb.grid_for(36), ConfigError);
  std::mt19937_64 rng(2);
  EXPECT_THROW(extract_patches(bb, random_sample(rng, 3, 20), Mode::Eval), ConfigError);
}

// A zero image stays zero through the convolution, so batch norm emits its shift.
TEST(BackboneTest, ZeroInputGivesBatchNormShift) {
  std::mt19937_64 init(1);
  Backbone bb(BackboneConfig{1, 6, 6, 0.2}, init);
  Param* beta = bb.params()[2];
  for (std::size_t c = 0; c < 6; ++c) beta->value[c] = 0.1 * static_cast<double>(c + 1);
  MultiViewSample s;
  s.views = 3, s.height = 8, s.width = 8;
  s.pixels.assign(3 * 64, 0.0f);
  PatchSet ps = extract_patches(bb, s, Mode::Train);
  for (std::size_t r = 0; r < ps.features.dim(0); ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(ps.features.at(r, c), beta->value[c]);
}

TEST(BackboneTest, ViewOrderPermutesPatchBlocks) {
  std::mt19937_64 init(3);
  Backbone bb(BackboneConfig{2, 4, 2, 0.2}, init);
  std::mt19937_64 rng(4);
  MultiViewSample s = random_sample(rng, 4, 8);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  MultiViewSample t = s;
  for (std::size_t z = 0; z < 4; ++z) std::copy(s.view(perm[z]), s.view(perm[z]) + 64, t.pixels.begin() + z * 64);
  PatchSet a = extract_patches(bb, s, Mode::Eval);
  PatchSet b = extract_patches(bb, t, Mode::Eval);
  const std::size_t per_view = 4;  // P = 2
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t j = 0; j < per_view; ++j)
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_EQ(b.features.at(z * per_view + j, c), a.features.at(perm[z] * per_view + j, c));
}

TEST(BackboneTest, BatchedEqualsSingleInEvalMode) {
  std::mt19937_64 init(5);
  Backbone bb(BackboneConfig{2, 4, 2, 0.2}, init);
  std::mt19937_64 rng(6);
  MultiViewSample s1 = random_sample(rng, 3, 8), s2 = random_sample(rng, 3, 8);
  Tape tape;
  const MultiViewSample* both[] = {&s1, &s2};
  PatchBatch pb = bb.forward(tape, both, Mode::Eval);
  PatchSet second = extract_patches(bb, s2, Mode::Eval);
  const std::size_t M = pb.layout.patches();
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(pb.features.value().at(M + r, c), second.features.at(r, c));
}

TEST(PatchGridTest, SinglePatchEntry) {
  PatchGridEntry e;
  e.views = 1, e.grid = 1, e.dim = 2;
  e.values = {1.5f, -2.0f};
  PatchSet ps = patches_from_pvf(e);
  EXPECT_EQ(ps.features, Tensor::from_rows({{1.5, -2.0}}));
  ASSERT_EQ(ps.coords.size(), 1u);
  EXPECT_EQ(ps.coords[0], (PatchCoord{0, 0, 0}));
  e.values.push_back(0.0f);
  EXPECT_THROW(patches_from_pvf(e), DimensionError);
}

TEST(PatchGridTest, CanonicalIndexIsABijection) {
  const PatchLayout layout{7, 512, 12};
  EXPECT_EQ(layout.patches(), 588u);
  std::set<std::size_t> seen;
  for (std::uint32_t z = 0; z < 12; ++z)
    for (std::uint32_t x = 0; x < 7; ++x)
      for (std::uint32_t y = 0; y < 7; ++y) {
        const PatchCoord c{x, y, z};
        const std::size_t j = canonical_index(layout, c);
        EXPECT_EQ(j, z * 49u + x * 7u + y);
        EXPECT_EQ(canonical_coord(layout, j), c);
        seen.insert(j);
      }
  EXPECT_EQ(seen.size(), 588u);
  EXPECT_EQ(*seen.rbegin(), 587u);
}

TEST(PatchGridTest, PaperGridHas588Rows) {
  PatchGridEntry e;
  e.views = 12, e.grid = 7, e.dim = 3;
  e.values.resize(588 * 3);
  std::iota(e.values.begin(), e.values.end(), 0.0f);
  PatchSet ps = patches_from_pvf(e);
  EXPECT_EQ(ps.features.dim(0), 588u);
  // Row j holds the values stored at (view, row, col) = canonical_coord(j).
  const PatchCoord c = ps.coords[100];
  const std::size_t offset = ((c.view * 7 + c.row) * 7 + c.col) * 3;
  EXPECT_EQ(ps.features.at(100, 2), e.values[offset + 2]);
}
