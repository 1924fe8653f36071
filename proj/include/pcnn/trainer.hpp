#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcnn/adam.hpp"
#include "pcnn/loss.hpp"
#include "pcnn/model.hpp"

namespace pcnn {

struct TrainConfig {
  AdamConfig adam;
  double clip = 0.01;  // elementwise, applied to raw gradients before Adam
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  std::size_t max_steps = 0;  // 0: run all epochs
  LossConfig loss;

  void validate() const;
};

struct TraceRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;  // 1-based
  double l_model = 0.0;
  double l_views = 0.0;
  double l_dis = 0.0;
  std::size_t neg_wvl_count = 0;

  bool operator==(const TraceRecord&) const = default;
};

struct TrainOutputs {
  std::string checkpoint;       // final parameters; empty to skip
  std::string best_checkpoint;  // lowest epoch-mean l_dis; empty to skip
  std::string trace_csv;        // empty to skip
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_l_dis = 0.0;
  double median_l_dis = 0.0;
  std::size_t steps = 0;
};

struct TrainResult {
  std::vector<TraceRecord> trace;
  std::vector<EpochSummary> epochs;
  std::size_t best_epoch = 0;
};

/// Mini-batches are drawn from a seeded per-epoch shuffle; indices within a
/// batch are sorted so a batch's computation depends only on its members.
TrainResult train(PcnnModel& model, const Dataset& data, const TrainConfig& config, const TrainOutputs& outputs = {},
                  const std::function<void(const EpochSummary&)>& on_epoch = {});

/// step,epoch,l_model,l_views,l_dis,neg_wvl_count with round-trip precision.
void write_trace_csv(const std::string& path, const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> read_trace_csv(const std::string& path);

}  // namespace pcnn
