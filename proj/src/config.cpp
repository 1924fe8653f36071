#include "pcnn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <tuple>

#include "pcnn/error.hpp"

namespace pcnn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size() && std::isfinite(out)) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a real number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string real_text(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PCNN_SIZE_KEY(NAME, FIELD)                                                                    \
  Key {                                                                                              \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_size(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                   \
  }
#define PCNN_REAL_KEY(NAME, FIELD)                                                                    \
  Key {                                                                                              \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_real(k, v); }, \
        [](const RunConfig& c) { return real_text(c.FIELD); }                                        \
  }
#define PCNN_BOOL_KEY(NAME, FIELD)                                                                    \
  Key {                                                                                              \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); }, \
        [](const RunConfig& c) { return bool_text(c.FIELD); }                                        \
  }
#define PCNN_PATH_KEY(NAME, FIELD)                                                                                \
  Key {                                                                                                          \
    NAME, [](RunConfig& c, const std::string&, const std::string& v) { c.FIELD = v; }, [](const RunConfig& c) { \
      return c.FIELD;                                                                                            \
    }                                                                                                            \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      Key{"profile", [](RunConfig&, const std::string&, const std::string&) {},
          [](const RunConfig& c) { return c.profile; }},
      PCNN_PATH_KEY("data.train", train_data),
      PCNN_PATH_KEY("data.test", test_data),
      PCNN_PATH_KEY("checkpoint", checkpoint),
      PCNN_PATH_KEY("output_dir", output_dir),
      PCNN_SIZE_KEY("data.views", views),
      PCNN_SIZE_KEY("data.resolution", resolution),
      PCNN_SIZE_KEY("backbone.blocks", backbone.blocks),
      PCNN_SIZE_KEY("backbone.dim", backbone.dim),
      PCNN_SIZE_KEY("backbone.width", backbone.width),
      PCNN_REAL_KEY("backbone.leaky_slope", backbone.leaky_slope),
      PCNN_BOOL_KEY("patchconv.enabled", patchconv_enabled),
      PCNN_SIZE_KEY("patchconv.k", patchconv.k),
      PCNN_BOOL_KEY("patchconv.use_coords", patchconv.use_coords),
      PCNN_REAL_KEY("patchconv.leaky_slope", patchconv.leaky_slope),
      Key{"patchconv.metric",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "euclidean")
              c.patchconv.metric = KnnMetric::Euclidean;
            else if (v == "cosine")
              c.patchconv.metric = KnnMetric::Cosine;
            else
              throw ConfigError(k + ": expected euclidean or cosine, got '" + v + "'");
          },
          [](const RunConfig& c) {
            return std::string(c.patchconv.metric == KnnMetric::Euclidean ? "euclidean" : "cosine");
          }},
      PCNN_BOOL_KEY("awv.enabled", awv_enabled),
      PCNN_SIZE_KEY("model.num_classes", num_classes),
      PCNN_REAL_KEY("loss.beta", train.loss.beta),
      PCNN_REAL_KEY("loss.gamma", train.loss.gamma),
      Key{"loss.view_mode",
          [](RunConfig& c, const std::string&, const std::string& v) { c.train.loss.view_mode = parse_view_loss_mode(v); },
          [](const RunConfig& c) { return view_loss_mode_name(c.train.loss.view_mode); }},
      PCNN_REAL_KEY("train.lr", train.adam.lr),
      PCNN_REAL_KEY("train.adam_beta1", train.adam.beta1),
      PCNN_REAL_KEY("train.adam_beta2", train.adam.beta2),
      PCNN_REAL_KEY("train.adam_eps", train.adam.eps),
      PCNN_REAL_KEY("train.clip", train.clip),
      PCNN_SIZE_KEY("train.epochs", train.epochs),
      PCNN_SIZE_KEY("train.batch_size", train.batch_size),
      Key{"train.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      PCNN_SIZE_KEY("train.max_steps", train.max_steps),
      Key{"retrieval.metric", [](RunConfig& c, const std::string&, const std::string& v) { c.metric = parse_metric(v); },
          [](const RunConfig& c) { return metric_name(c.metric); }},
      PCNN_BOOL_KEY("retrieval.rerank", rerank),
  };
  return keys;
}

}  // namespace

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper() {
  RunConfig c;
  c.profile = "paper";
  c.views = 12;
  c.resolution = 224;
  c.backbone.blocks = 5;
  c.backbone.dim = 512;
  c.backbone.width = 64;
  c.patchconv.k = 12;
  c.train.adam.lr = 4e-5;
  c.train.batch_size = 16;
  c.train.epochs = 30;
  c.train.loss.beta = 0.5;
  c.train.loss.gamma = 0.5;
  return c;
}

RunConfig RunConfig::for_profile(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("profile: expected desk or paper, got '" + name + "'");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Key& k : key_table())
    if (key == k.name) {
      k.set(*this, key, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : key_table()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::string out = "# effective configuration\n";
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  train.validate();
  if (views < 3) throw ConfigError("data.views must be at least 3");
  if (resolution < 16) throw ConfigError("data.resolution must be at least 16");
  ModelConfig m = model_config(InputKind::Images, 0, num_classes ? num_classes : 1);
  m.validate();
}

ModelConfig RunConfig::model_config(InputKind input, std::size_t input_dim, std::size_t classes) const {
  ModelConfig m;
  m.input = input;
  m.backbone = backbone;
  m.input_dim = input_dim;
  m.use_patchconv = patchconv_enabled;
  m.patchconv = patchconv;
  m.use_awv = awv_enabled;
  m.num_classes = classes;
  m.init_seed = train.seed;
  return m;
}

RunConfig parse_config(const std::string& text) {
  std::vector<std::tuple<std::size_t, std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::string profile = "desk";
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (key == "profile") profile = value;
    pairs.emplace_back(lineno, std::move(key), std::move(value));
  }
  RunConfig cfg = RunConfig::for_profile(profile);
  for (const auto& [n, key, value] : pairs) {
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.emplace_back(k.name);
  return out;
}

void apply_ablation(RunConfig& c, const std::string& name) {
  if (name == "full") {
    c.patchconv_enabled = true;
    c.patchconv.use_coords = true;
    c.awv_enabled = true;
  } else if (name == "mvcnn-baseline") {
    c.patchconv_enabled = false;
    c.awv_enabled = false;
  } else if (name == "patchconv-only") {
    c.patchconv_enabled = true;
    c.patchconv.use_coords = true;
    c.awv_enabled = false;
  } else if (name == "awv-only") {
    c.patchconv_enabled = false;
    c.awv_enabled = true;
  } else if (name == "edgeconv-awv") {
    c.patchconv_enabled = true;
    c.patchconv.use_coords = false;
    c.awv_enabled = true;
  } else {
    throw ConfigError("unknown ablation '" + name +
                      "' (expected mvcnn-baseline, patchconv-only, awv-only, edgeconv-awv or full)");
  }
}

void apply_loss_mode(RunConfig& c, const std::string& name) {
  if (name == "ml") {
    c.train.loss.gamma = 0.0;
    c.train.loss.view_mode = ViewLossMode::None;
  } else if (name == "ml-avl") {
    c.train.loss.view_mode = ViewLossMode::Average;
  } else if (name == "discrimination") {
    c.train.loss.view_mode = ViewLossMode::Weighted;
  } else {
    throw ConfigError("unknown loss mode '" + name + "' (expected ml, ml-avl or discrimination)");
  }
}

}  // namespace pcnn
