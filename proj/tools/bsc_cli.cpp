/* Copyright 2026 The BSC Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line entry point: data generation, training, gradient checks,
// batch-size sweeps, memory reports and generalization-bound reports.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bsc/errors.hpp"
#include "bsc/harness/checkpoint.hpp"
#include "bsc/harness/config.hpp"
#include "bsc/harness/data.hpp"
#include "bsc/harness/train.hpp"
#include "bsc/microbatch/engine.hpp"
#include "bsc/numerics/ops.hpp"
#include "bsc/optim/optim.hpp"
#include "bsc/shardsim/memory.hpp"
#include "bsc/theory/probe.hpp"

namespace {

using namespace bsc;
using namespace bsc::harness;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

// Writes to `path`, or stdout when it is empty or "-".
template <typename Fn>
void emit(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
  } else {
    std::ofstream out = open_out(path);
    fn(out);
  }
}

TrainConfig config_or_default(const std::string& path) {
  return path.empty() ? TrainConfig{} : load_config(path);
}

SyntheticPairSet data_for(const TrainConfig& cfg, const std::string& path) {
  if (path.empty()) return gen_data(cfg.data);
  return dataset_from_tensors(load_tensors(path));
}

int cmd_gen_data(const std::string& config, const std::string& out) {
  const TrainConfig cfg = config_or_default(config);
  const SyntheticPairSet d = gen_data(cfg.data);
  save_tensors(out, dataset_to_tensors(d));
  std::cout << "wrote " << d.size() << " pairs in " << d.spec.classes << " classes to " << out
            << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::string& data_path, const std::string& init,
              const std::string& out, const std::string& metrics) {
  const TrainConfig cfg = config_or_default(config);
  const SyntheticPairSet data = data_for(cfg, data_path);
  std::optional<ModelState> start;
  if (!init.empty()) start = load_model(init, cfg);
  const TrainResult r = train(cfg, data, start ? &*start : nullptr);
  if (!out.empty()) save_model(out, r.model);
  emit(metrics, [&](std::ostream& os) { write_metrics_csv(os, r.metrics); });
  std::cerr << "final zero-shot accuracy " << r.final_accuracy << '\n';
  return 0;
}

int cmd_verify_grad(const std::string& config, double tolerance) {
  const TrainConfig cfg = config_or_default(config);
  const TrainSettings& ts = cfg.train;
  Rng rng(ts.seed, 0x76657269);
  const encoders::EncoderNet f = make_image_encoder(cfg, rng);
  const encoders::EncoderNet g = make_text_encoder(cfg, rng);
  const SyntheticPairSet data = gen_data(cfg.data);
  std::vector<std::size_t> rows(ts.batch_size);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i % data.size();
  const microbatch::PairBatch batch = data.gather(rows);
  const auto plan = microbatch::BatchPlan::make(ts.batch_size, ts.microbatch_img,
                                                ts.microbatch_txt, ts.replicas);
  microbatch::GradAverager avg;
  const microbatch::StepResult sr =
      microbatch::microbatch_gradients(f, g, batch, plan, ts.temperature, std::ref(avg));
  const microbatch::OracleResult oracle = microbatch::monolithic_oracle(f, g, batch, ts.temperature);

  double worst = 0.0;
  std::cout << "tower,tensor,relative_l2\n";
  auto report = [&](const char* tower, const encoders::EncoderNet& net,
                    const encoders::ParamGrads& got, const encoders::ParamGrads& want) {
    for (std::size_t i = 0; i < net.num_params(); ++i) {
      const double e = relative_l2_error(got[i], want[i]);
      worst = std::max(worst, e);
      std::printf("%s,%s,%.3e\n", tower, net.param_name(i).c_str(), e);
    }
  };
  report("image", f, avg.img, oracle.grad_img);
  report("text", g, avg.txt, oracle.grad_txt);
  std::printf("# loss microbatched %.17g oracle %.17g\n", sr.loss, oracle.loss);
  const bool ok = worst <= tolerance;
  std::printf("# max relative L2 %.3e (tolerance %.1e): %s\n", worst, tolerance,
              ok ? "ok" : "MISMATCH");
  if (f.has_batch_coupling() || g.has_batch_coupling()) {
    std::printf("# batchnorm couples rows; microbatched gradients are not expected to match\n");
  }
  return ok ? 0 : 1;
}

int cmd_scale_batch(const std::string& config, const std::vector<std::size_t>& batches,
                    std::size_t budget, const std::vector<std::uint64_t>& seeds,
                    const std::string& out) {
  const TrainConfig cfg = config_or_default(config);
  const std::vector<ScaleRow> rows = scale_batch_experiment(cfg, batches, budget, seeds);
  emit(out, [&](std::ostream& os) { write_scale_csv(os, rows); });
  for (std::size_t b : batches) {
    std::vector<double> acc;
    for (const ScaleRow& r : rows) {
      if (r.batch == b) acc.push_back(r.accuracy);
    }
    std::cerr << "B=" << b << " median accuracy " << median(acc) << '\n';
  }
  return 0;
}

int cmd_mem_report(const std::string& config, const std::vector<std::string>& strategies,
                   const std::vector<std::size_t>& batches, std::size_t micro,
                   std::size_t cores, bool instrumented, const std::string& out) {
  const TrainConfig cfg = config_or_default(config);
  Rng rng(cfg.train.seed, 0x6d656d);
  const encoders::EncoderNet f = make_image_encoder(cfg, rng);
  const encoders::EncoderNet g = make_text_encoder(cfg, rng);
  shardsim::ModelUnderTest model;
  model.image = &f;
  model.text = &g;
  model.slots.factorized = cfg.train.factorized;
  model.image_example = rng.normal_tensor({1, cfg.data.input_dim});
  model.text_example = rng.normal_tensor({1, cfg.data.tokens, cfg.data.token_dim});

  emit(out, [&](std::ostream& os) {
    os << "strategy,B,M,R_cores,peak_elements,gather_elements\n";
    for (const std::string& name : strategies) {
      const shardsim::Strategy s = shardsim::parse_strategy(name);
      for (std::size_t b : batches) {
        const std::size_t m = s == shardsim::Strategy::kDataParallel ? b : micro;
        const std::size_t r = s == shardsim::Strategy::kSpmdShard ? cores : 1;
        const shardsim::MemoryReport rep =
            instrumented ? shardsim::instrumented_peak(s, model, b, m, r)
                         : shardsim::peak_memory(s, model, b, m, r);
        os << shardsim::to_string(s) << ',' << b << ',' << m << ',' << r << ','
           << rep.peak_elements << ',' << rep.gather_elements << '\n';
      }
    }
  });
  return 0;
}

nlohmann::json norms_json(const theory::NetNorms& n) {
  return {{"frobenius", n.frobenius},         {"last_rows", n.last_rows},
          {"product_hidden", n.product_hidden}, {"row_sum", n.row_sum},
          {"row_rss", n.row_rss}};
}

int cmd_bound_report(const std::string& config, const std::string& checkpoint,
                     theory::GapProbeConfig probe, const std::string& out) {
  TrainConfig cfg = config_or_default(config);
  if (cfg.model.norm != encoders::Norm::kNone) {
    throw PreconditionError("bound-report needs encoders without normalization; set model.norm to \"none\"");
  }
  std::optional<ModelState> m;
  if (!checkpoint.empty()) {
    m = load_model(checkpoint, cfg);
  } else {
    Rng rng(cfg.train.seed, 0x626f756e64);
    m = ModelState{make_image_encoder(cfg, rng), make_text_encoder(cfg, rng),
                   Schedule::kContrastiveScratch};
  }
  const Prototypes protos = make_prototypes(cfg.data);
  const SyntheticPairSet tr = draw_split(cfg.data, protos, probe.m, 0);
  const SyntheticPairSet te = draw_split(cfg.data, protos, probe.m, 1);
  const SyntheticPairSet pool = draw_split(cfg.data, protos, probe.test_texts, 2);
  const theory::GapData gd{tr.images, tr.texts, te.images, te.texts, pool.texts};
  const theory::BoundReport r = theory::theorem1_bound(m->image, m->text, gd, probe);

  nlohmann::json j;
  j["constants"] = {{"c1", r.c1}, {"c2", r.c2}, {"c3", r.c3}, {"c4", r.c4}, {"c5", r.c5},
                    {"c6", r.c6}, {"c7", r.c7}, {"c8", r.c8}, {"c9", r.c9}};
  j["c9_is_estimate"] = r.c9_is_estimate;
  j["expected_a"] = r.expected_a;
  j["text_norms"] = norms_json(r.text_norms);
  j["image_norms"] = norms_json(r.image_norms);
  j["q"] = {{"q11", r.q11}, {"q12", r.q12}, {"q21", r.q21}, {"q22", r.q22},
            {"q1", r.q1},   {"q2", r.q2}};
  j["rhs"] = r.rhs;
  j["m"] = r.m;
  j["batch"] = r.batch;
  j["kappa"] = r.kappa;
  j["delta"] = r.delta;
  j["gap"] = {{"gap", r.gap.gap},
              {"standard_error", r.gap.standard_error},
              {"train_mean", r.gap.train_mean},
              {"test_mean", r.gap.test_mean}};
  j["gap_within_bound"] = r.gap.gap <= r.rhs;
  emit(out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive batch scaling toolkit"};
  app.require_subcommand(1);
  std::string config;
  app.add_option("-c,--config", config, "JSON config (defaults when omitted)");

  std::string out, data_path, init, metrics;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
  gen->add_option("-o,--out", out, "Dataset file")->required();

  auto* tr = app.add_subcommand("train", "Train per the config's schedule");
  tr->add_option("-d,--data", data_path, "Dataset file (generated from the config if omitted)");
  tr->add_option("--init", init, "Checkpoint to start from (hybrid-finetune)");
  tr->add_option("-o,--out", out, "Checkpoint to write");
  tr->add_option("-m,--metrics", metrics, "Metrics CSV (stdout if omitted)");

  double tolerance = 1e-10;
  auto* vg = app.add_subcommand("verify-grad", "Compare microbatched and monolithic gradients");
  vg->add_option("--tolerance", tolerance, "Largest accepted relative L2 error");

  std::vector<std::size_t> batches{64, 128, 256, 512};
  std::size_t budget = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  auto* sb = app.add_subcommand("scale-batch", "Batch-size sweep at a fixed examples budget");
  sb->add_option("-b,--batches", batches, "Batch sizes")->delimiter(',');
  sb->add_option("--budget", budget, "Examples seen per run")->required();
  sb->add_option("-s,--seeds", seeds, "Seeds")->delimiter(',');
  sb->add_option("-o,--out", out, "CSV (stdout if omitted)");

  std::vector<std::string> strategies{"data-parallel", "pipeline-gradaccum", "spmd-shard"};
  std::vector<std::size_t> mem_batches{256, 512, 1024};
  std::size_t micro = 32, cores = 4;
  bool instrumented = false;
  auto* mr = app.add_subcommand("mem-report", "Per-device peak memory by strategy");
  mr->add_option("--strategies", strategies, "Strategies")->delimiter(',');
  mr->add_option("-b,--batches", mem_batches, "Batch sizes")->delimiter(',');
  mr->add_option("-M,--micro", micro, "Microbatch size");
  mr->add_option("-R,--cores", cores, "Cores per replica for spmd-shard");
  mr->add_flag("--instrumented", instrumented, "Measure on a ledger instead of the closed form");
  mr->add_option("-o,--out", out, "CSV (stdout if omitted)");

  theory::GapProbeConfig probe;
  std::string checkpoint;
  auto* br = app.add_subcommand("bound-report", "Generalization gap and bound terms as JSON");
  br->add_option("--checkpoint", checkpoint, "Trained weights (random init if omitted)");
  br->add_option("--m", probe.m, "Training pairs");
  br->add_option("-B,--batch", probe.batch, "Texts per normalized train loss");
  br->add_option("--test-texts", probe.test_texts, "Texts in the test-loss pool");
  br->add_option("--draws", probe.draws, "Text batches per train example");
  br->add_option("--delta", probe.delta, "Confidence parameter");
  br->add_option("--lipschitz-pairs", probe.lipschitz_pairs, "Pairs for the slope estimate");
  br->add_option("--seed", probe.seed, "Probe seed");
  br->add_option("-o,--out", out, "JSON (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*tr) return cmd_train(config, data_path, init, out, metrics);
    if (*vg) return cmd_verify_grad(config, tolerance);
    if (*sb) return cmd_scale_batch(config, batches, budget, seeds, out);
    if (*mr) return cmd_mem_report(config, strategies, mem_batches, micro, cores, instrumented, out);
    if (*br) return cmd_bound_report(config, checkpoint, probe, out);
  } catch (const bsc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
