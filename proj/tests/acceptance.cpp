// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchconv_oracle.hpp"
#include "pcnn/app.hpp"
#include "pcnn/awv.hpp"
#include "pcnn/gradcheck_suite.hpp"
#include "pcnn/loss.hpp"
#include "pcnn/patchconv.hpp"
#include "pcnn/retrieval.hpp"
#include "pcnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace pcnn;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor gaussian(std::mt19937_64& rng, Shape shape, double sd = 1.0) {
  Tensor t(std::move(shape), 0.0);
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// ---- criterion 1 ----

Verdict gradient_suite() {
  GradSuiteOptions o;
  o.seeds = 100;
  const auto t0 = Clock::now();
  const auto rows = run_gradcheck_suite(o);
  const double secs = seconds_since(t0);
  Verdict v;
  double worst = 0.0;
  std::string worst_op;
  bool has_end_to_end = false;
  for (const auto& r : rows) {
    v.pass = v.pass && r.passed && r.seeds == 100 && r.max_rel_error < 1e-5;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_op = r.op;
    has_end_to_end |= r.op.find("l_dis") != std::string::npos;
  }
  v.pass = v.pass && has_end_to_end && secs < 120.0;
  v.detail = std::to_string(rows.size()) + " ops x 100 seeds, worst " + fmt("%.2e", worst) + " (" + worst_op + "), " +
             fmt("%.1f s", secs);
  return v;
}

// ---- criterion 2 ----

PatchSet permuted(const PatchSet& a, const std::vector<std::size_t>& perm) {
  PatchSet b = a;
  for (std::size_t r = 0; r < perm.size(); ++r) {
    b.coords[r] = a.coords[perm[r]];
    for (std::size_t c = 0; c < a.features.dim(1); ++c) b.features.at(r, c) = a.features.at(perm[r], c);
  }
  return b;
}

Verdict patchconv_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t mismatched_perm = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const test::OracleInstance inst = test::draw_instance(rng);
    PatchConvConfig cfg;
    cfg.k = inst.k;
    cfg.use_coords = inst.use_coords;
    PatchConvLayer layer(inst.layout.dim, cfg, rng);
    test::randomize_norm(layer, rng);
    const std::size_t M = inst.layout.patches();
    Tensor x = gaussian(rng, {M, inst.layout.dim});
    PatchSet in{x, canonical_coords(inst.layout), inst.layout};

    Tensor out = patchconv_forward(in, layer, Mode::Train).features;
    Tensor ref = test::brute_force_patchconv(x, in.coords, layer, inst.k, inst.use_coords, cfg.leaky_slope);
    if (out.shape() != ref.shape()) return {false, "shape mismatch at trial " + std::to_string(trial)};
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(out[i] - ref[i]));

    std::vector<std::size_t> perm(M);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor ya = patchconv_forward(in, layer, Mode::Eval).features;
    Tensor yb = patchconv_forward(permuted(in, perm), layer, Mode::Eval).features;
    bool same = true;
    for (std::size_t r = 0; r < M && same; ++r)
      for (std::size_t c = 0; c < ya.dim(1); ++c) same = same && yb.at(r, c) == ya.at(perm[r], c);
    mismatched_perm += !same;
  }
  return {worst < 1e-9 && mismatched_perm == 0, "200 instances, max |diff| " + fmt("%.2e", worst) +
                                                    ", inexact permutations " + std::to_string(mismatched_perm)};
}

// ---- criterion 3 ----

Verdict awv_algebra() {
  std::mt19937_64 rng(31);
  double sum_err = 0.0, scale_err = 0.0, w_sum_err = 0.0, wvl_avl = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + trial % 3, N = 2 + trial % 11, D = 1 + trial % 7;
    Tape tape;
    Tensor f = gaussian(rng, {B, N, D});
    Tensor alpha = attention_weights(tape.constant(f)).alpha.value();
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += alpha[b * N + n];
      sum_err = std::max(sum_err, std::abs(s - 1.0));
    }

    Tensor scaled = f;
    const double c = std::exp(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
    for (double& v : scaled.data()) v *= c;
    Tensor alpha2 = attention_weights(tape.constant(scaled)).alpha.value();
    for (std::size_t i = 0; i < alpha.size(); ++i) scale_err = std::max(scale_err, std::abs(alpha[i] - alpha2[i]));

    LossConfig wvl;
    wvl.view_mode = ViewLossMode::Weighted;
    LossConfig avl = wvl;
    avl.view_mode = ViewLossMode::Average;
    Var lm = tape.constant(Tensor::scalar(0.7));
    Var pv = tape.constant(gaussian(rng, {B, N}));
    LossTerms t = combine(lm, pv, tape.constant(alpha), wvl);
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += t.loss_weights.value()[b * N + n];
      w_sum_err = std::max(w_sum_err, std::abs(s - 1.0));
    }
    Var uniform = tape.constant(Tensor({B, N}, 1.0 / static_cast<double>(N)));
    wvl_avl = std::max(wvl_avl, std::abs(combine(lm, pv, uniform, wvl).l_views.value().item() -
                                         combine(lm, pv, uniform, avl).l_views.value().item()));
  }
  const bool ok = sum_err <= 1e-10 && scale_err <= 1e-10 && w_sum_err <= 1e-10 && wvl_avl <= 1e-12;
  return {ok, "sum(alpha) " + fmt("%.1e", sum_err) + ", rescale " + fmt("%.1e", scale_err) + ", WVL weights " +
                  fmt("%.1e", w_sum_err) + ", WVL-AVL " + fmt("%.1e", wvl_avl)};
}

// ---- criterion 4 ----

// Exact fraction of the rank-by-rank definition, rounded once.
std::optional<double> brute_force_ap(const std::vector<bool>& rel) {
  std::uint64_t num = 0, den = 1, total = 0;
  for (std::size_t r = 0; r < rel.size(); ++r) {
    if (!rel[r]) continue;
    std::uint64_t hits = 0;
    for (std::size_t q = 0; q <= r; ++q) hits += rel[q];
    num = num * (r + 1) + hits * den;
    den *= r + 1;
    const std::uint64_t g = std::gcd(num, den);
    num /= g, den /= g;
    ++total;
  }
  if (total == 0) return std::nullopt;
  den *= total;
  const std::uint64_t g = std::gcd(num, den);
  return static_cast<double>(num / g) / static_cast<double>(den / g);
}

std::optional<double> ap_of(const std::vector<bool>& rel) {
  std::unique_ptr<bool[]> bits(new bool[rel.size() + 1]);
  std::copy(rel.begin(), rel.end(), bits.get());
  return average_precision(std::span<const bool>(bits.get(), rel.size()));
}

Verdict map_oracle() {
  std::mt19937_64 rng(1);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<bool> rel(1 + rng() % 20);
    for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = rng() % 2;
    mismatches += ap_of(rel) != brute_force_ap(rel);
  }
  const auto five_sixths = ap_of({true, false, true});
  const bool exact = five_sixths && *five_sixths == 5.0 / 6.0;
  return {mismatches == 0 && exact,
          "1000 strings, mismatches " + std::to_string(mismatches) + ", AP(1,0,1)=" + fmt("%.17g", five_sixths.value_or(-1))};
}

// ---- criteria 5 to 8: CLI driven runs ----

struct Cli {
  int code;
  std::string out, err;
};

Cli cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct RunResult {
  bool ok = false;
  double map = 0.0;
  double seconds = 0.0;
  std::vector<TraceRecord> trace;
  std::string error;
};

RunResult train_and_eval(const fs::path& data, const fs::path& dir, const std::string& ablation,
                         const std::string& loss, std::uint64_t seed) {
  RunResult r;
  const std::vector<std::string> common{"--set", "data.train=" + (data / "train.mvi").string(),
                                        "--set", "data.test=" + (data / "test.mvi").string(),
                                        "--set", "train.seed=" + std::to_string(seed),
                                        "--ablation", ablation, "--loss", loss,
                                        "--checkpoint", (dir / "model.pck").string(), "--out", dir.string()};
  const auto t0 = Clock::now();
  std::vector<std::string> args{"train"};
  args.insert(args.end(), common.begin(), common.end());
  Cli tr = cli(args);
  if (tr.code != kExitOk) {
    r.error = "train exit " + std::to_string(tr.code) + ": " + tr.err;
    return r;
  }
  args = {"eval"};
  args.insert(args.end(), common.begin(), common.end());
  Cli ev = cli(args);
  r.seconds = seconds_since(t0);
  if (ev.code != kExitOk || ev.out.rfind("map=", 0) != 0) {
    r.error = "eval exit " + std::to_string(ev.code) + ": " + ev.err;
    return r;
  }
  r.map = std::stod(ev.out.substr(4));
  r.trace = read_trace_csv((dir / "trace.csv").string());
  r.ok = true;
  return r;
}

std::map<std::size_t, std::vector<double>> losses_by_epoch(const std::vector<TraceRecord>& trace) {
  std::map<std::size_t, std::vector<double>> by;
  for (const auto& t : trace) by[t.epoch].push_back(t.l_dis);
  return by;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

void report(int n, const Verdict& v, bool& all) {
  std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  all = all && v.pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PCNN acceptance run"};
  std::string work = "acceptance_work";
  app.add_option("--work-dir", work, "scratch directory for data and runs");
  CLI11_PARSE(app, argc, argv);

  bool all = true;
  report(1, gradient_suite(), all);
  report(2, patchconv_oracle(), all);
  report(3, awv_algebra(), all);
  report(4, map_oracle(), all);

  const fs::path root = fs::absolute(work);
  fs::remove_all(root);
  const fs::path data = root / "data";
  Cli gen = cli({"gen-data", "--classes", "sphere,box,cylinder,pyramid", "--per-class", "40", "--test-per-class", "20",
                 "--views", "6", "--res", "32", "--seed", "7", "--out", data.string()});
  if (gen.code != kExitOk) {
    std::cerr << "gen-data failed: " << gen.err;
    for (int n = 5; n <= 8; ++n) report(n, {false, "dataset generation failed"}, all);
    return 1;
  }

  struct Arm {
    std::string name, ablation, loss;
  };
  const std::vector<Arm> arms{{"full-disc", "full", "discrimination"},
                              {"full-ml", "full", "ml"},
                              {"mvcnn-baseline-ml", "mvcnn-baseline", "ml"},
                              {"edgeconv-awv-ml", "edgeconv-awv", "ml"}};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::map<std::string, std::vector<RunResult>> runs;
  std::string failure;
  for (const Arm& arm : arms) {
    for (std::uint64_t s : seeds) {
      RunResult r = train_and_eval(data, root / arm.name / ("seed" + std::to_string(s)), arm.ablation, arm.loss, s);
      std::cout << "  " << arm.name << " seed " << s << ": "
                << (r.ok ? "map=" + fmt("%.4f", r.map) + " in " + fmt("%.1f s", r.seconds) : r.error) << std::endl;
      if (!r.ok && failure.empty()) failure = arm.name + ": " + r.error;
      runs[arm.name].push_back(std::move(r));
    }
  }

  // 5: mAP >= 0.90 within 15 minutes for at least 4 of 5 seeds.
  {
    std::size_t good = 0;
    std::string maps;
    for (const RunResult& r : runs["full-disc"]) {
      good += r.ok && r.map >= 0.90 && r.seconds < 900.0;
      maps += (maps.empty() ? "" : " ") + fmt("%.4f", r.map);
    }
    report(5, {good >= 4, std::to_string(good) + "/5 seeds at mAP>=0.90 under 15 min [" + maps + "]"}, all);
  }

  // 6: ordering of median mAP with 0.005 slack.
  {
    std::map<std::string, double> med;
    bool ok = failure.empty();
    for (const Arm& arm : arms) {
      std::vector<double> m;
      for (const RunResult& r : runs[arm.name]) m.push_back(r.map);
      med[arm.name] = median(m);
    }
    const double slack = 0.005;
    ok = ok && med["full-disc"] >= med["full-ml"] - slack && med["full-ml"] >= med["mvcnn-baseline-ml"] - slack &&
         med["full-ml"] >= med["edgeconv-awv-ml"] - slack;
    std::string detail = "medians:";
    for (const Arm& arm : arms) detail += " " + arm.name + "=" + fmt("%.4f", med[arm.name]);
    report(6, {ok, failure.empty() ? detail : failure}, all);
  }

  // 7: two identical 10-step runs give identical traces and checkpoints.
  {
    auto run = [&](const std::string& tag) {
      const fs::path dir = root / "determinism" / tag;
      return cli({"train", "--set", "data.train=" + (data / "train.mvi").string(), "--set", "train.max_steps=10",
                  "--set", "train.seed=3", "--ablation", "full", "--loss", "discrimination", "--checkpoint",
                  (dir / "model.pck").string(), "--out", dir.string()});
    };
    const Cli a = run("a"), b = run("b");
    Verdict v{false, "train failed"};
    if (a.code == kExitOk && b.code == kExitOk) {
      auto bytes = [&](const std::string& tag, const char* file) {
        std::ifstream in(root / "determinism" / tag / file, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
      };
      const auto trace = read_trace_csv((root / "determinism" / "a" / "trace.csv").string());
      const bool same_trace = bytes("a", "trace.csv") == bytes("b", "trace.csv");
      const bool same_ckpt = bytes("a", "model.pck") == bytes("b", "model.pck") && !bytes("a", "model.pck").empty();
      v = {trace.size() == 10 && same_trace && same_ckpt,
           std::to_string(trace.size()) + " steps, trace " + (same_trace ? "identical" : "differs") + ", checkpoint " +
               (same_ckpt ? "identical" : "differs")};
    }
    report(7, v, all);
  }

  // 8: epoch 20 mean <= 40% of epoch 1 mean for every full-disc seed. The
  // run must also halve the loss by epoch 10 and end with a lower median.
  {
    bool ok = failure.empty();
    std::string detail;
    for (std::size_t i = 0; i < runs["full-disc"].size(); ++i) {
      const auto by = losses_by_epoch(runs["full-disc"][i].trace);
      if (by.size() < 20) {
        ok = false;
        detail += " seed" + std::to_string(seeds[i]) + ":missing epochs";
        continue;
      }
      const double first = mean(by.at(1)), tenth = mean(by.at(10)), last = mean(by.at(20));
      ok = ok && last <= 0.4 * first && tenth <= 0.5 * first && median(by.at(20)) < median(by.at(1));
      detail += " " + fmt("%.3f", last / first);
    }
    report(8, {ok, "epoch20/epoch1 mean loss ratio per seed:" + detail}, all);
  }

  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
