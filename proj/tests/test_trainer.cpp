#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "pcnn/adam.hpp"
#include "pcnn/checkpoint.hpp"
#include "pcnn/error.hpp"
#include "pcnn/trainer.hpp"
#include "support.hpp"

using namespace pcnn;
using pcnn::test::TempDir;

namespace {

Dataset small_images(std::size_t per_class = 4, std::uint64_t seed = 3) {
  GenerateOptions o;
  o.classes = parse_class_list("sphere,box,pyramid");
  o.per_class = per_class;
  o.views = 3;
  o.resolution = 16;
  o.seed = seed;
  return Dataset::from_images(generate(o));
}

ModelConfig small_model(std::size_t classes = 3) {
  ModelConfig m;
  m.backbone = BackboneConfig{2, 8, 4, 0.2};
  m.patchconv.k = 4;
  m.num_classes = classes;
  m.init_seed = 11;
  return m;
}

TrainConfig small_train() {
  TrainConfig t;
  t.adam.lr = 3e-3;
  t.batch_size = 4;
  t.epochs = 2;
  t.seed = 5;
  return t;
}

}  // namespace

TEST(ClipTest, Examples) {
  Param p("p", Tensor({3}, 0.0));
  p.grad = Tensor({3}, {0.5, -0.005, -5.0});
  std::vector<Param*> ps{&p};
  EXPECT_EQ(clip_gradients(ps, 0.01), 2u);
  EXPECT_DOUBLE_EQ(p.grad[0], 0.01);
  EXPECT_DOUBLE_EQ(p.grad[1], -0.005);
  EXPECT_DOUBLE_EQ(p.grad[2], -0.01);
  EXPECT_THROW(clip_gradients(ps, 0.0), ConfigError);
}

TEST(ClipTest, BoundsEveryComponent) {
  std::mt19937_64 rng(1);
  Param p("p", Tensor({200}, 0.0));
  p.grad = test::random_tensor(rng, {200}, 10.0);
  std::vector<Param*> ps{&p};
  clip_gradients(ps, 0.3);
  for (double g : p.grad.data()) EXPECT_LE(std::abs(g), 0.3);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Param p("p", Tensor({4}, 2.0));
  p.grad = Tensor({4}, 1.0);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  Adam adam({&p}, cfg);
  adam.step();
  for (double v : p.value.data()) EXPECT_NEAR(v, 2.0 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(AdamTest, ZeroGradientLeavesParamsUnchanged) {
  Param p("p", Tensor({3}, {1.0, -2.0, 0.5}));
  p.grad = Tensor({3}, 0.0);
  Adam adam({&p}, AdamConfig{});
  for (int i = 0; i < 5; ++i) adam.step();
  EXPECT_EQ(p.value, Tensor({3}, {1.0, -2.0, 0.5}));
}

TEST(AdamTest, TwoStepsDifferFromOneDoubledStep) {
  std::mt19937_64 rng(2);
  const Tensor g = test::random_tensor(rng, {5});
  Param a("a", Tensor({5}, 0.0)), b("b", Tensor({5}, 0.0));
  a.grad = g;
  b.grad = g;
  AdamConfig one;
  one.lr = 1e-2;
  AdamConfig doubled = one;
  doubled.lr = 2e-2;
  Adam two_steps({&a}, one), one_step({&b}, doubled);
  two_steps.step();
  two_steps.step();
  one_step.step();
  EXPECT_NE(a.value, b.value);
}

TEST(AdamTest, NonFiniteGradientNamesParam) {
  Param p("classifier/fusion/weight", Tensor({2}, 0.0));
  p.grad = Tensor({2}, {0.0, std::numeric_limits<double>::quiet_NaN()});
  Adam adam({&p}, AdamConfig{});
  try {
    adam.step();
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("classifier/fusion/weight"), std::string::npos);
  }
  EXPECT_EQ(p.value, Tensor({2}, 0.0));
}

TEST(ModelTest, EmbeddingDimensions) {
  ModelConfig desk;
  desk.backbone = BackboneConfig{3, 32, 8, 0.2};
  EXPECT_EQ(desk.view_dim(), 35u);
  desk.patchconv.use_coords = false;
  EXPECT_EQ(desk.view_dim(), 32u);
  desk.patchconv.use_coords = true;
  desk.use_patchconv = false;
  EXPECT_EQ(desk.view_dim(), 32u);

  ModelConfig paper;
  paper.input = InputKind::PatchGrids;
  paper.input_dim = 512;
  paper.patchconv.k = 12;
  PcnnModel model(paper);
  EXPECT_EQ(model.embedding_dim(), 515u);
}

TEST(ModelTest, IdenticalModelsIdenticalEmbeddings) {
  Dataset d = small_images(2);
  d.images[1].pixels = d.images[0].pixels;
  PcnnModel model(small_model());
  auto emb = model.embed(d);
  ASSERT_EQ(emb.size(), d.size());
  EXPECT_EQ(emb[0].descriptor, emb[1].descriptor);
  EXPECT_EQ(emb[0].descriptor.size(), 11u);
}

TEST(ModelTest, PatchGridInput) {
  std::mt19937_64 rng(3);
  std::vector<PatchGridEntry> grids(6);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    grids[i].label = static_cast<std::uint32_t>(i % 2);
    grids[i].model_id = static_cast<std::uint32_t>(i);
    grids[i].views = 3, grids[i].grid = 2, grids[i].dim = 5;
    grids[i].values.resize(3 * 4 * 5);
    std::normal_distribution<float> n;
    for (float& v : grids[i].values) v = n(rng);
  }
  ModelConfig cfg;
  cfg.input = InputKind::PatchGrids;
  cfg.input_dim = 5;
  cfg.patchconv.k = 3;
  cfg.num_classes = 2;
  PcnnModel model(cfg);
  Dataset data = Dataset::from_grids(grids);
  TrainConfig t = small_train();
  t.batch_size = 3;
  TrainResult r = train(model, data, t);
  EXPECT_EQ(r.trace.size(), 4u);
  EXPECT_EQ(model.embed(data)[0].descriptor.size(), 8u);

  cfg.input_dim = 6;
  PcnnModel wrong(cfg);
  EXPECT_THROW(wrong.embed(data), DimensionError);
}

TEST(ModelTest, CheckpointRoundTrip) {
  TempDir dir("ckpt");
  Dataset d = small_images(2);
  PcnnModel a(small_model());
  train(a, d, small_train());
  a.save(dir.file("m.pck"));
  ModelConfig other = small_model();
  other.init_seed = 99;
  PcnnModel b(other);
  b.load(dir.file("m.pck"));
  auto ea = a.embed(d), eb = b.embed(d);
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i].descriptor, eb[i].descriptor);
    EXPECT_EQ(ea[i].predicted_class, eb[i].predicted_class);
  }

  auto tensors = load_checkpoint(dir.file("m.pck"));
  tensors.pop_back();
  EXPECT_THROW(b.restore(tensors), DimensionError);
  ModelConfig edge = small_model();
  edge.patchconv.use_coords = false;
  PcnnModel c(edge);
  EXPECT_THROW(c.load(dir.file("m.pck")), DimensionError);
}

TEST(TrainerTest, SameSeedSameTraceAndCheckpoint) {
  TempDir dir("det");
  Dataset d = small_images();
  TrainConfig t = small_train();
  t.max_steps = 10;
  t.epochs = 10;
  PcnnModel a(small_model()), b(small_model());
  TrainResult ra = train(a, d, t, {dir.file("a.pck"), "", dir.file("a.csv")});
  TrainResult rb = train(b, d, t, {dir.file("b.pck"), "", dir.file("b.csv")});
  ASSERT_EQ(ra.trace.size(), 10u);
  EXPECT_EQ(ra.trace, rb.trace);
  EXPECT_EQ(test::read_bytes(dir.file("a.csv")), test::read_bytes(dir.file("b.csv")));
  EXPECT_EQ(test::read_bytes(dir.file("a.pck")), test::read_bytes(dir.file("b.pck")));
  EXPECT_EQ(read_trace_csv(dir.file("a.csv")), ra.trace);

  t.seed = 6;
  PcnnModel c(small_model());
  EXPECT_NE(train(c, d, t).trace, ra.trace);
}

TEST(TrainerTest, ZeroLearningRateKeepsTraceConstant) {
  Dataset d = small_images(2);
  TrainConfig t = small_train();
  t.adam.lr = 0.0;
  t.batch_size = d.size();
  t.epochs = 4;
  PcnnModel m(small_model());
  TrainResult r = train(m, d, t);
  ASSERT_EQ(r.trace.size(), 4u);
  for (const TraceRecord& rec : r.trace) {
    EXPECT_EQ(rec.l_dis, r.trace[0].l_dis);
    EXPECT_EQ(rec.l_model, r.trace[0].l_model);
    EXPECT_EQ(rec.l_views, r.trace[0].l_views);
  }
}

TEST(TrainerTest, ClassCountMismatch) {
  Dataset d = small_images(2);
  PcnnModel m(small_model(2));
  EXPECT_THROW(train(m, d, small_train()), ConfigError);
}

TEST(TrainerTest, EmptyDataRejected) {
  PcnnModel m(small_model());
  EXPECT_THROW(train(m, Dataset::from_images({}), small_train()), ConfigError);
}

TEST(TrainerTest, LossDecreases) {
  Dataset d = small_images(6);
  TrainConfig t = small_train();
  t.epochs = 8;
  PcnnModel m(small_model());
  std::vector<EpochSummary> seen;
  TrainResult r = train(m, d, t, {}, [&](const EpochSummary& s) { seen.push_back(s); });
  ASSERT_EQ(r.epochs.size(), 8u);
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_LT(r.epochs.back().median_l_dis, r.epochs.front().median_l_dis);
  EXPECT_GE(r.best_epoch, 1u);
}

TEST(TrainerTest, BestCheckpointIsWritten) {
  TempDir dir("best");
  Dataset d = small_images(2);
  PcnnModel m(small_model());
  train(m, d, small_train(), {"", dir.file("best.pck"), ""});
  PcnnModel other(small_model());
  EXPECT_NO_THROW(other.load(dir.file("best.pck")));
}
