#include "pcnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pcnn/error.hpp"

namespace pcnn {

void TrainConfig::validate() const {
  adam.validate();
  loss.validate();
  if (!(clip > 0.0)) throw ConfigError("train: clip must be positive");
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TrainResult train(PcnnModel& model, const Dataset& data, const TrainConfig& cfg, const TrainOutputs& outputs,
                  const std::function<void(const EpochSummary&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty training set");
  if (data.num_classes() > model.config().num_classes)
    throw ConfigError("train: data has " + std::to_string(data.num_classes()) + " classes, classifier has " +
                      std::to_string(model.config().num_classes));

  std::vector<Param*> params = model.params();
  Adam adam(params, cfg.adam);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5348554646ULL));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<NamedTensor> best;
  double best_loss = 0.0;
  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<double> losses;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch_size));
      std::sort(idx.begin(), idx.end());
      std::vector<std::size_t> labels;
      for (std::size_t i : idx) labels.push_back(data.label(i));

      for (Param* p : params) p->zero_grad();
      Tape tape;
      ForwardResult fwd = model.forward(tape, data, idx, Mode::Train);
      LossTerms terms = model.loss(tape, fwd, labels, cfg.loss);
      const LossBreakdown b = breakdown(terms);
      if (!std::isfinite(b.l_dis)) throw NumericError("train: non-finite loss at step " + std::to_string(step + 1));
      tape.backward(terms.l_dis);
      clip_gradients(params, cfg.clip);
      adam.step();

      ++step;
      result.trace.push_back({step, epoch, b.l_model, b.l_views, b.l_dis, b.negative_weights});
      losses.push_back(b.l_dis);
      if (cfg.max_steps && step >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    EpochSummary s;
    s.epoch = epoch;
    s.steps = losses.size();
    s.mean_l_dis = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    s.median_l_dis = median(losses);
    result.epochs.push_back(s);
    if (best.empty() || s.mean_l_dis < best_loss) {
      best_loss = s.mean_l_dis;
      result.best_epoch = epoch;
      if (!outputs.best_checkpoint.empty()) best = model.snapshot();
    }
    if (on_epoch) on_epoch(s);
  }

  if (!outputs.checkpoint.empty()) model.save(outputs.checkpoint);
  if (!outputs.best_checkpoint.empty()) save_checkpoint(outputs.best_checkpoint, best);
  if (!outputs.trace_csv.empty()) write_trace_csv(outputs.trace_csv, result.trace);
  return result;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRecord>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace '" + path + "'");
  out << "step,epoch,l_model,l_views,l_dis,neg_wvl_count\n";
  char line[256];
  for (const TraceRecord& r : trace) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g,%zu\n", r.step, r.epoch, r.l_model, r.l_views, r.l_dis,
                  r.neg_wvl_count);
    out << line;
  }
  if (!out) throw std::runtime_error("failed writing trace '" + path + "'");
}

std::vector<TraceRecord> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRecord r;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%zu", &r.step, &r.epoch, &r.l_model, &r.l_views, &r.l_dis,
                    &r.neg_wvl_count) != 6)
      throw std::runtime_error("malformed trace line: " + line);
    out.push_back(r);
  }
  return out;
}

}  // namespace pcnn
