#include "pcnn/app.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcnn/config.hpp"
#include "pcnn/error.hpp"
#include "pcnn/gradcheck_suite.hpp"
#include "pcnn/retrieval.hpp"

namespace pcnn {

namespace fs = std::filesystem;

namespace {

// Raised for problems the user must fix in the invocation (exit 2).
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError(what + " '" + path + "' does not exist");
}

struct RunOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string ablation;
  std::string loss;
  std::string data;
  std::string checkpoint;
  std::string out_dir;
};

RunConfig resolve_config(const RunOptions& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig::desk() : load_config(o.config_path);
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (!o.ablation.empty()) apply_ablation(cfg, o.ablation);
  if (!o.loss.empty()) apply_loss_mode(cfg, o.loss);
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

ModelConfig model_for(const RunConfig& cfg, const Dataset& data) {
  std::size_t input_dim = 0;
  if (data.kind == InputKind::PatchGrids && !data.empty()) input_dim = data.grids.front().dim;
  const std::size_t classes = cfg.num_classes ? cfg.num_classes : data.num_classes();
  if (classes == 0) throw ConfigError("cannot infer the class count from an empty dataset");
  return cfg.model_config(data.kind, input_dim, classes);
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << text;
}

// ---- gen-data ---------------------------------------------------------------

struct GenOptions {
  std::string classes = "sphere,box,cylinder,pyramid";
  std::size_t per_class = 40;
  std::size_t test_per_class = 0;  // 0: half of per_class (at least 1)
  std::size_t views = 6;
  std::size_t res = 32;
  std::uint64_t seed = 7;
  std::string out = "data";
};

int cmd_gen_data(const GenOptions& o, std::ostream& out) {
  GenerateOptions g;
  try {
    g.classes = parse_class_list(o.classes);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.views < 3) throw UsageError("--views must be at least 3");
  if (o.res < 16) throw UsageError("--res must be at least 16");
  if (o.per_class < 1) throw UsageError("--per-class must be positive");
  g.views = o.views;
  g.resolution = o.res;
  const std::size_t test_per_class = o.test_per_class ? o.test_per_class : std::max<std::size_t>(1, o.per_class / 2);

  fs::create_directories(o.out);
  nlohmann::ordered_json manifest;
  manifest["seed"] = o.seed;
  manifest["num_classes"] = g.classes.size();
  std::vector<std::string> names;
  for (ShapeKind k : g.classes) names.emplace_back(shape_name(k));
  manifest["classes"] = names;
  manifest["N"] = o.views;
  manifest["H"] = o.res;
  manifest["W"] = o.res;
  std::uint32_t next_id = 0;
  const struct {
    const char* tag;
    std::size_t per_class;
    std::uint64_t stream;
  } splits[] = {{"train", o.per_class, 1}, {"test", test_per_class, 2}};
  for (const auto& s : splits) {
    g.per_class = s.per_class;
    g.seed = derive_seed(o.seed, s.stream);
    g.first_model_id = next_id;
    const auto samples = generate(g);
    next_id += static_cast<std::uint32_t>(samples.size());
    const std::string path = (fs::path(o.out) / (std::string(s.tag) + ".mvi")).string();
    write_mvi(path, samples, ViewGeometry{o.views, o.res, o.res});
    manifest["splits"][s.tag] = {{"file", std::string(s.tag) + ".mvi"},
                                 {"num_models", samples.size()},
                                 {"seed", g.seed},
                                 {"first_model_id", g.first_model_id}};
    out << "wrote " << path << " (" << samples.size() << " models)\n";
  }
  write_text((fs::path(o.out) / "manifest.json").string(), manifest.dump(2) + "\n");
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const RunOptions& o, std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  if (!o.data.empty()) cfg.train_data = o.data;
  require_file(cfg.train_data, "training data");
  const Dataset data = Dataset::load(cfg.train_data);
  if (data.empty()) throw ConfigError("training data '" + cfg.train_data + "' holds no models");
  ModelConfig mc = model_for(cfg, data);
  cfg.num_classes = mc.num_classes;  // recorded so embed rebuilds the same classifier
  PcnnModel model(mc);

  fs::create_directories(cfg.output_dir);
  ensure_parent(cfg.checkpoint);
  write_text((fs::path(cfg.output_dir) / "effective.cfg").string(), cfg.to_text());
  TrainOutputs outputs;
  outputs.checkpoint = cfg.checkpoint;
  outputs.best_checkpoint = (fs::path(cfg.output_dir) / "best.pck").string();
  outputs.trace_csv = (fs::path(cfg.output_dir) / "trace.csv").string();
  const TrainResult r = train(model, data, cfg.train, outputs, [&out](const EpochSummary& s) {
    char line[128];
    std::snprintf(line, sizeof line, "epoch %zu mean_l_dis=%.6f median_l_dis=%.6f\n", s.epoch, s.mean_l_dis,
                  s.median_l_dis);
    out << line << std::flush;
  });
  out << "steps=" << r.trace.size() << " best_epoch=" << r.best_epoch << " checkpoint=" << cfg.checkpoint << "\n";
  return kExitOk;
}

// ---- embed / retrieve / eval -------------------------------------------------

std::vector<EmbeddingRecord> embed_dataset(const RunConfig& cfg, const std::string& data_path) {
  require_file(data_path, "dataset");
  require_file(cfg.checkpoint, "checkpoint");
  const Dataset data = Dataset::load(data_path);
  if (data.empty()) return {};
  PcnnModel model(model_for(cfg, data));
  model.load(cfg.checkpoint);
  const auto emb = model.embed(data);
  std::vector<EmbeddingRecord> records;
  for (std::size_t i = 0; i < emb.size(); ++i)
    records.push_back({data.model_id(i), data.label(i), emb[i].predicted_class, emb[i].descriptor});
  return records;
}

int cmd_embed(const RunOptions& o, const std::string& emb_out, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const std::string data_path = o.data.empty() ? cfg.test_data : o.data;
  const auto records = embed_dataset(cfg, data_path);
  const std::string path = emb_out.empty() ? (fs::path(cfg.output_dir) / "embeddings.emb").string() : emb_out;
  ensure_parent(path);
  const std::size_t dim = records.empty() ? 0 : records.front().embedding.size();
  write_emb(path, records, dim);
  out << "wrote " << path << " (" << records.size() << " embeddings, dim " << dim << ")\n";
  return kExitOk;
}

std::vector<EmbeddingRecord> load_embeddings(const std::string& path) {
  require_file(path, "embedding file");
  return load_emb(path);
}

int cmd_retrieve(const std::string& emb, const std::string& metric, bool rerank, const std::string& out_path,
                 std::ostream& out) {
  const auto records = load_embeddings(emb);
  if (records.size() < 2) throw UsageError("retrieve needs at least 2 embeddings");
  std::vector<RankedList> lists;
  for (std::size_t q = 0; q < records.size(); ++q) lists.push_back(rank_query(records, q, parse_metric(metric), rerank));
  ensure_parent(out_path);
  write_ranking_csv(out_path, lists);
  out << "wrote " << out_path << " (" << lists.size() << " queries)\n";
  return kExitOk;
}

int cmd_eval(const RunOptions& o, const std::string& emb, const std::string& metric, bool rerank, bool rerank_set,
             std::ostream& out) {
  std::vector<EmbeddingRecord> records;
  std::string out_dir = o.out_dir;
  DistanceMetric m = DistanceMetric::Cosine;
  bool use_rerank = rerank;
  if (!emb.empty()) {
    records = load_embeddings(emb);
    if (!metric.empty()) m = parse_metric(metric);
  } else {
    const RunConfig cfg = resolve_config(o);
    records = embed_dataset(cfg, o.data.empty() ? cfg.test_data : o.data);
    m = metric.empty() ? cfg.metric : parse_metric(metric);
    if (!rerank_set) use_rerank = cfg.rerank;
    if (out_dir.empty()) out_dir = cfg.output_dir;
  }
  if (records.size() < 2) throw UsageError("eval needs at least 2 models");
  const RetrievalMetrics r = map_and_pr(records, m, use_rerank);
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  write_metrics_json((fs::path(out_dir) / "metrics.json").string(), r);
  write_pr_csv((fs::path(out_dir) / "pr.csv").string(), r);
  char line[64];
  std::snprintf(line, sizeof line, "map=%.6f\n", r.map);
  out << line;
  return kExitOk;
}

// ---- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const GradSuiteOptions& o, std::ostream& out) {
  const auto rows = run_gradcheck_suite(o);
  const GradSuiteRow* worst = nullptr;
  bool ok = true;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %6s %8s %14s %6s  %s\n", "op", "seeds", "redrawn", "max_rel_error", "status",
                "worst");
  out << line;
  for (const GradSuiteRow& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %6zu %8zu %14.3e %6s  seed %llu %s\n", r.op.c_str(), r.seeds, r.redrawn,
                  r.max_rel_error, r.passed ? "ok" : "FAIL", static_cast<unsigned long long>(r.worst_seed),
                  r.worst_param.c_str());
    out << line;
    ok = ok && r.passed;
    if (!worst || r.max_rel_error > worst->max_rel_error) worst = &r;
  }
  if (worst) {
    std::snprintf(line, sizeof line, "worst: %s max_rel_error=%.3e\n", worst->op.c_str(), worst->max_rel_error);
    out << line;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

void add_run_options(CLI::App* cmd, RunOptions& o, bool with_model_flags) {
  cmd->add_option("--config", o.config_path, "key = value configuration file");
  cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--data", o.data, "dataset file (MVI or PVF)");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  cmd->add_option("--out", o.out_dir, "output directory");
  if (with_model_flags) {
    cmd->add_option("--ablation", o.ablation, "mvcnn-baseline | patchconv-only | awv-only | edgeconv-awv | full");
    cmd->add_option("--loss", o.loss, "ml | ml-avl | discrimination");
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PCNN: patch convolutional multi-view 3D retrieval", "pcnn"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate synthetic train/test multi-view sets");
  c_gen->add_option("--classes", gen.classes, "comma-separated shapes: sphere, box, cylinder, pyramid, torus");
  c_gen->add_option("--per-class", gen.per_class, "training models per class");
  c_gen->add_option("--test-per-class", gen.test_per_class, "test models per class (default: half of --per-class)");
  c_gen->add_option("--views", gen.views, "views per model (N)");
  c_gen->add_option("--res", gen.res, "image resolution (H = W)");
  c_gen->add_option("--seed", gen.seed, "generator seed");
  c_gen->add_option("--out", gen.out, "output directory");

  RunOptions train_o;
  auto* c_train = app.add_subcommand("train", "train a model and write checkpoint + loss trace");
  add_run_options(c_train, train_o, true);

  RunOptions embed_o;
  std::string embed_out;
  auto* c_embed = app.add_subcommand("embed", "write retrieval embeddings (EMB) for a dataset");
  add_run_options(c_embed, embed_o, true);
  c_embed->add_option("--emb", embed_out, "output EMB file");

  std::string ret_emb, ret_metric = "cosine", ret_out = "ranking.csv";
  bool ret_rerank = false;
  auto* c_ret = app.add_subcommand("retrieve", "rank every model against the others");
  c_ret->add_option("--emb", ret_emb, "EMB file")->required();
  c_ret->add_option("--metric", ret_metric, "cosine | euclidean");
  c_ret->add_flag("--rerank", ret_rerank, "move items of the query's predicted class first");
  c_ret->add_option("--out", ret_out, "ranking CSV");

  RunOptions eval_o;
  std::string eval_emb, eval_metric;
  bool eval_rerank = false;
  auto* c_eval = app.add_subcommand("eval", "mAP and PR curve; prints map=<value>");
  add_run_options(c_eval, eval_o, true);
  c_eval->add_option("--emb", eval_emb, "EMB file (otherwise embed --data with the checkpoint)");
  c_eval->add_option("--metric", eval_metric, "cosine | euclidean");
  auto* eval_rerank_flag = c_eval->add_flag("--rerank", eval_rerank, "rerank by predicted class");

  GradSuiteOptions gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  c_gc->add_option("--op", gc.only, "check a single op");
  c_gc->add_option("--seeds", gc.seeds, "random instances per op");
  c_gc->add_option("--corrupt-op", gc.corrupt, "test hook: perturb this op's analytic gradient");

  std::vector<std::string> storage{"pcnn"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (const auto subs = app.get_subcommands(); !subs.empty()) err << subs.front()->help();
    return kExitUsage;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen, out);
    if (*c_train) return cmd_train(train_o, out);
    if (*c_embed) return cmd_embed(embed_o, embed_out, out);
    if (*c_ret) return cmd_retrieve(ret_emb, ret_metric, ret_rerank, ret_out, out);
    if (*c_eval) return cmd_eval(eval_o, eval_emb, eval_metric, eval_rerank, eval_rerank_flag->count() > 0, out);
    if (*c_gc) return cmd_gradcheck(gc, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const UndefinedMetricError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    // Configuration, dimension, format and I/O problems: the invocation needs fixing.
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace pcnn
