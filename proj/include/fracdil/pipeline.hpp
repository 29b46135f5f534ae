#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracdil/bench.hpp"
#include "fracdil/dataset.hpp"
#include "fracdil/decompose.hpp"
#include "fracdil/density.hpp"
#include "fracdil/serialize.hpp"
#include "fracdil/train.hpp"
#include "fracdil/transfer.hpp"

namespace fracdil {

// End-to-end run: train the adaptive net, freeze its scales, rewrite it into
// fixed branches, transfer the weights, finetune, and compare against a dense
// baseline trained with the same budget.
struct PipelineConfig {
  DatasetConfig data{/*n=*/512, /*num_patterns=*/4, /*scale=*/2.5,
                     /*noise=*/0.06, /*image=*/32};
  int eval_n = 512;
  TrainConfig train_gsl{/*epochs=*/20, /*batch=*/8, /*lr=*/0.15, /*momentum=*/0.9,
                        /*weight_decay=*/1e-4, /*pred_lr_mult=*/0.03, /*seed=*/0};
  TrainConfig finetune{/*epochs=*/20, /*batch=*/8, /*lr=*/0.02, /*momentum=*/0.9,
                       /*weight_decay=*/1e-4, /*pred_lr_mult=*/1.0, /*seed=*/0};
  int stats_samples = 256;
  double threshold = kNearIntegerThreshold;
  std::vector<int> channels{16, 32, 32};
};

inline PipelineConfig pipeline_config_from_json(const ordered_json& j) {
  PipelineConfig cfg;
  if (j.contains("data")) {
    const auto& d = j["data"];
    if (d.contains("n")) cfg.data.n = d["n"].get<int>();
    if (d.contains("num_patterns")) cfg.data.num_patterns = d["num_patterns"].get<int>();
    if (d.contains("scale")) cfg.data.scale = d["scale"].get<double>();
    if (d.contains("noise")) cfg.data.noise = d["noise"].get<double>();
    if (d.contains("image")) cfg.data.image = d["image"].get<int>();
  }
  if (j.contains("eval_n")) cfg.eval_n = j["eval_n"].get<int>();
  auto read_train = [](const ordered_json& t, TrainConfig& out) {
    if (t.contains("epochs")) out.epochs = t["epochs"].get<int>();
    if (t.contains("batch")) out.batch = t["batch"].get<int>();
    if (t.contains("lr")) out.lr = t["lr"].get<double>();
    if (t.contains("momentum")) out.momentum = t["momentum"].get<double>();
    if (t.contains("weight_decay")) out.weight_decay = t["weight_decay"].get<double>();
    if (t.contains("pred_lr_mult")) out.pred_lr_mult = t["pred_lr_mult"].get<double>();
  };
  if (j.contains("train_gsl")) read_train(j["train_gsl"], cfg.train_gsl);
  if (j.contains("finetune")) read_train(j["finetune"], cfg.finetune);
  if (j.contains("stats_samples")) cfg.stats_samples = j["stats_samples"].get<int>();
  if (j.contains("threshold")) cfg.threshold = j["threshold"].get<double>();
  if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<int>>();
  return cfg;
}

struct PipelineResult {
  std::vector<ScaleStats> stats;
  EvalResult gsl, fd_init, fd_wt, plain;
  std::vector<double> gsl_loss, finetune_loss, plain_loss;
};

namespace detail {

template <typename Fn>
auto pipeline_stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
}

}  // namespace detail

// Runs every stage and drops all artifacts into `out_dir`. Identical config
// and seed produce byte-identical artifacts.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, uint64_t seed,
                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  PipelineResult result;

  SyntheticDataset train_ds, eval_ds;
  detail::pipeline_stage("gen-data", [&] {
    train_ds = gen_multiscale_dataset(cfg.data, seed ^ 0xA1u);
    DatasetConfig ecfg = cfg.data;
    ecfg.n = cfg.eval_n;
    eval_ds = gen_multiscale_dataset(ecfg, seed ^ 0xB2u);
    save_dataset(train_ds, path("dataset_train.podw"));
    save_dataset(eval_ds, path("dataset_eval.podw"));
    return 0;
  });

  ModelGraph gsl_net = make_toy_net(cfg.data.num_patterns, /*adaptive=*/true, cfg.channels);
  detail::pipeline_stage("train-gsl", [&] {
    init_weights(gsl_net, seed ^ 0xC3u);
    TrainConfig tc = cfg.train_gsl;
    tc.seed = seed ^ 0xD4u;
    result.gsl_loss = train(gsl_net, train_ds, tc).epoch_loss;
    return 0;
  });

  detail::pipeline_stage("inspect-scales", [&] {
    result.stats = collect_scale_stats(gsl_net, train_ds, cfg.stats_samples);
    save_scale_stats_csv(result.stats, path("scale_stats.csv"));
    apply_frozen_scales(gsl_net, freeze_scales(result.stats));
    save_graph_json(gsl_net, path("gsl_graph.json"));
    save_weights(gsl_net.weights, path("gsl_weights.podw"));
    return 0;
  });

  ModelGraph fd_net;
  detail::pipeline_stage("decompose", [&] {
    fd_net = decompose_graph(gsl_net, {}, cfg.threshold);
    save_graph_json(fd_net, path("fd_graph.json"));
    return 0;
  });

  detail::pipeline_stage("transfer", [&] {
    const WeightMap wm = transfer_weights(gsl_net, fd_net);
    ordered_json j;
    j["records"] = ordered_json::array();
    for (const auto& r : wm.records) {
      ordered_json rj;
      rj["layer"] = r.layer;
      rj["branch"] = r.branch;
      rj["src_rows"] = {r.src_lo, r.src_hi};
      rj["kernel_map"] = ordered_json::array();
      for (const auto& m : r.kernel_map)
        rj["kernel_map"].push_back({m.src_i, m.src_j, m.dst_i, m.dst_j});
      j["records"].push_back(rj);
    }
    j["dropped"] = wm.dropped;
    std::ofstream f(path("weight_map.json"), std::ios::binary);
    if (!f) throw std::runtime_error("cannot open weight_map.json");
    f << j.dump(2) << '\n';
    save_weights(fd_net.weights, path("fd_weights_init.podw"));
    return 0;
  });

  detail::pipeline_stage("finetune", [&] {
    result.fd_init = evaluate(fd_net, eval_ds);
    TrainConfig tc = cfg.finetune;
    tc.seed = seed ^ 0xE5u;
    result.finetune_loss = train(fd_net, train_ds, tc).epoch_loss;
    save_weights(fd_net.weights, path("fd_weights.podw"));
    return 0;
  });

  ModelGraph plain_net = make_toy_net(cfg.data.num_patterns, /*adaptive=*/false, cfg.channels);
  detail::pipeline_stage("train-plain", [&] {
    init_weights(plain_net, seed ^ 0xF6u);
    TrainConfig tc = cfg.train_gsl;
    tc.seed = seed ^ 0x17u;
    result.plain_loss = train(plain_net, train_ds, tc).epoch_loss;
    save_graph_json(plain_net, path("plain_graph.json"));
    save_weights(plain_net.weights, path("plain_weights.podw"));
    return 0;
  });

  detail::pipeline_stage("eval", [&] {
    result.gsl = evaluate(gsl_net, eval_ds);
    result.fd_wt = evaluate(fd_net, eval_ds);
    result.plain = evaluate(plain_net, eval_ds);
    ordered_json j;
    auto put = [&](const char* key, const EvalResult& r) {
      j[key] = {{"accuracy", r.accuracy}, {"mean_loss", r.mean_loss}};
    };
    put("gsl", result.gsl);
    put("fd_transferred", result.fd_init);
    put("fd_wt", result.fd_wt);
    put("plain", result.plain);
    j["gsl_vs_fd_wt_gap"] = std::abs(result.gsl.accuracy - result.fd_wt.accuracy);
    j["fd_wt_vs_plain_gain"] = result.fd_wt.accuracy - result.plain.accuracy;
    std::ofstream f(path("eval_report.json"), std::ios::binary);
    if (!f) throw std::runtime_error("cannot open eval_report.json");
    f << j.dump(2) << '\n';
    return 0;
  });

  return result;
}

}  // namespace fracdil
