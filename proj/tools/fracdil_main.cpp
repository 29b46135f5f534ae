// Command-line front end: every subcommand is a thin wrapper over the library
// that reads/writes files, so stages can be run one at a time or end to end
// via `pipeline`.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "fracdil/bench.hpp"
#include "fracdil/dataset.hpp"
#include "fracdil/decompose.hpp"
#include "fracdil/density.hpp"
#include "fracdil/pipeline.hpp"
#include "fracdil/serialize.hpp"
#include "fracdil/train.hpp"
#include "fracdil/transfer.hpp"

namespace {

namespace fs = std::filesystem;
using fracdil::ordered_json;

struct CommonArgs {
  uint64_t seed = 42;
  std::string config;
  std::string out = ".";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--seed", args.seed, "random seed");
  cmd->add_option("--config", args.config, "JSON config file");
  cmd->add_option("--out", args.out, "output directory");
}

ordered_json load_config(const CommonArgs& args) {
  if (args.config.empty()) return ordered_json::object();
  std::ifstream f(args.config);
  if (!f) throw std::runtime_error("cannot open " + args.config);
  ordered_json j;
  f >> j;
  return j;
}

std::string out_path(const CommonArgs& args, const std::string& name) {
  fs::create_directories(args.out);
  return (fs::path(args.out) / name).string();
}

void write_json(const ordered_json& j, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

ordered_json train_log_json(const std::vector<double>& losses) {
  ordered_json j;
  j["epoch_loss"] = losses;
  return j;
}

fracdil::ModelGraph load_model(const std::string& graph_path, const std::string& weights_path) {
  fracdil::ModelGraph g = fracdil::load_graph_json(graph_path);
  g.weights = fracdil::load_weights(weights_path);
  return g;
}

int run_gen_data(const CommonArgs& args) {
  const fracdil::PipelineConfig cfg = fracdil::pipeline_config_from_json(load_config(args));
  const fracdil::SyntheticDataset ds = fracdil::gen_multiscale_dataset(cfg.data, args.seed);
  fracdil::save_dataset(ds, out_path(args, "dataset.podw"));
  ordered_json meta;
  meta["n"] = cfg.data.n;
  meta["num_patterns"] = cfg.data.num_patterns;
  meta["scale"] = cfg.data.scale;
  meta["noise"] = cfg.data.noise;
  meta["image"] = cfg.data.image;
  meta["seed"] = args.seed;
  write_json(meta, out_path(args, "dataset_meta.json"));
  std::printf("wrote %d samples to %s\n", cfg.data.n, out_path(args, "dataset.podw").c_str());
  return 0;
}

int run_train_gsl(const CommonArgs& args, const std::string& data_path) {
  const fracdil::PipelineConfig cfg = fracdil::pipeline_config_from_json(load_config(args));
  const fracdil::SyntheticDataset ds = fracdil::load_dataset(data_path);
  fracdil::ModelGraph g =
      fracdil::make_toy_net(ds.num_patterns, /*adaptive=*/true, cfg.channels);
  fracdil::init_weights(g, args.seed);
  fracdil::TrainConfig tc = cfg.train_gsl;
  tc.seed = args.seed ^ 0xD4u;
  const fracdil::TrainResult r = fracdil::train(g, ds, tc);
  fracdil::save_graph_json(g, out_path(args, "gsl_graph.json"));
  fracdil::save_weights(g.weights, out_path(args, "gsl_weights.podw"));
  write_json(train_log_json(r.epoch_loss), out_path(args, "train_log.json"));
  std::printf("final loss %.6f\n", r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back());
  return 0;
}

int run_inspect_scales(const CommonArgs& args, const std::string& graph_path,
                       const std::string& weights_path, const std::string& data_path) {
  const fracdil::PipelineConfig cfg = fracdil::pipeline_config_from_json(load_config(args));
  fracdil::ModelGraph g = load_model(graph_path, weights_path);
  const fracdil::SyntheticDataset ds = fracdil::load_dataset(data_path);
  const auto stats = fracdil::collect_scale_stats(g, ds, cfg.stats_samples);
  fracdil::save_scale_stats_csv(stats, out_path(args, "scale_stats.csv"));
  fracdil::apply_frozen_scales(g, fracdil::freeze_scales(stats));
  fracdil::save_graph_json(g, out_path(args, "gsl_graph_frozen.json"));
  for (const auto& st : stats)
    std::printf("%s: h %.4f +/- %.4f, w %.4f +/- %.4f (n=%d)\n", st.layer.c_str(),
                st.mean_h, st.std_h, st.mean_w, st.std_w, st.n_samples);
  return 0;
}

int run_decompose(const CommonArgs& args, const std::string& graph_path) {
  const fracdil::PipelineConfig cfg = fracdil::pipeline_config_from_json(load_config(args));
  const fracdil::ModelGraph g = fracdil::load_graph_json(graph_path);
  const fracdil::ModelGraph fd = fracdil::decompose_graph(g, {}, cfg.threshold);
  fracdil::save_graph_json(fd, out_path(args, "fd_graph.json"));
  for (size_t li = 0; li < g.layers.size(); ++li) {
    if (fd.layers[li].kind != fracdil::LayerKind::fd_branch_group) continue;
    fracdil::save_density_csv(fracdil::layer_density(g.layers[li]),
                              out_path(args, "density_" + g.layers[li].name + "_gsl.csv"));
    fracdil::save_density_csv(fracdil::layer_density(fd.layers[li]),
                              out_path(args, "density_" + fd.layers[li].name + "_fd.csv"));
  }
  std::printf("wrote %s\n", out_path(args, "fd_graph.json").c_str());
  return 0;
}

int run_transfer(const CommonArgs& args, const std::string& gsl_graph,
                 const std::string& gsl_weights, const std::string& fd_graph) {
  fracdil::ModelGraph src = load_model(gsl_graph, gsl_weights);
  fracdil::ModelGraph dst = fracdil::load_graph_json(fd_graph);
  const fracdil::WeightMap wm = fracdil::transfer_weights(src, dst);
  fracdil::save_weights(dst.weights, out_path(args, "fd_weights_init.podw"));

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
  write_json(j, out_path(args, "weight_map.json"));

  // Probe the rewritten layers with a couple of random inputs and record the
  // audit next to the weights.
  const int c_in = src.layers.empty() ? 1 : src.layers.front().c_in;
  std::vector<fracdil::Tensor> probes;
  fracdil::Rng rng(args.seed ^ 0xF00Du);
  for (int i = 0; i < 2; ++i) {
    fracdil::Tensor t(1, c_in, 16, 16);
    t.fill_normal(rng);
    probes.push_back(std::move(t));
  }
  const fracdil::TransferReport report = fracdil::verify_transfer(src, dst, probes);
  ordered_json vj;
  vj["checks"] = ordered_json::array();
  for (const auto& c : report.checks) {
    ordered_json cj;
    cj["layer"] = c.layer;
    cj["check"] = c.check;
    cj["pass"] = c.pass;
    cj["max_diff"] = c.max_diff;
    if (!c.note.empty()) cj["note"] = c.note;
    vj["checks"].push_back(cj);
  }
  vj["all_passed"] = report.all_passed();
  write_json(vj, out_path(args, "transfer_report.json"));
  if (!report.all_passed()) throw std::runtime_error("transfer verification failed");
  std::printf("transferred %zu branch slices\n", wm.records.size());
  return 0;
}

int run_finetune(const CommonArgs& args, const std::string& graph_path,
                 const std::string& weights_path, const std::string& data_path) {
  const fracdil::PipelineConfig cfg = fracdil::pipeline_config_from_json(load_config(args));
  fracdil::ModelGraph g = load_model(graph_path, weights_path);
  const fracdil::SyntheticDataset ds = fracdil::load_dataset(data_path);
  fracdil::TrainConfig tc = cfg.finetune;
  tc.seed = args.seed ^ 0xE5u;
  const fracdil::TrainResult r = fracdil::train(g, ds, tc);
  fracdil::save_weights(g.weights, out_path(args, "fd_weights.podw"));
  write_json(train_log_json(r.epoch_loss), out_path(args, "finetune_log.json"));
  std::printf("final loss %.6f\n", r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back());
  return 0;
}

int run_eval(const CommonArgs& args, const std::string& graph_path,
             const std::string& weights_path, const std::string& data_path) {
  const fracdil::ModelGraph g = load_model(graph_path, weights_path);
  const fracdil::SyntheticDataset ds = fracdil::load_dataset(data_path);
  const fracdil::EvalResult r = fracdil::evaluate(g, ds);
  ordered_json j;
  j["accuracy"] = r.accuracy;
  j["mean_loss"] = r.mean_loss;
  write_json(j, out_path(args, "eval.json"));
  std::printf("accuracy %.4f mean_loss %.6f\n", r.accuracy, r.mean_loss);
  return 0;
}

int run_bench(const CommonArgs& args) {
  const ordered_json j = load_config(args);
  int channels = 16, hw = 64, reps = 30;
  double frac_scale = 1.5;
  if (j.contains("bench")) {
    const auto& b = j["bench"];
    if (b.contains("channels")) channels = b["channels"].get<int>();
    if (b.contains("hw")) hw = b["hw"].get<int>();
    if (b.contains("reps")) reps = b["reps"].get<int>();
    if (b.contains("frac_scale")) frac_scale = b["frac_scale"].get<double>();
  }
  const fracdil::BenchReport r =
      fracdil::bench_trunk_variants(channels, hw, reps, args.seed, frac_scale);
  ordered_json out;
  out["input_shape"] = r.input_shape;
  out["variants"] = ordered_json::array();
  for (const auto& v : r.variants) {
    out["variants"].push_back({{"name", v.name},
                               {"mean_ms", v.mean_ms},
                               {"std_ms", v.std_ms},
                               {"median_ms", v.median_ms},
                               {"reps", v.reps},
                               {"flops", v.flops}});
    std::printf("%-6s median %8.3f ms  mean %8.3f ms  (%d reps, %lld MACs)\n",
                v.name.c_str(), v.median_ms, v.mean_ms, v.reps, v.flops);
  }
  write_json(out, out_path(args, "bench.json"));
  return 0;
}

int run_full_pipeline(const CommonArgs& args) {
  const fracdil::PipelineConfig cfg = fracdil::pipeline_config_from_json(load_config(args));
  const fracdil::PipelineResult r = fracdil::run_pipeline(cfg, args.seed, args.out);
  std::printf("gsl accuracy %.4f | fd transferred %.4f | fd finetuned %.4f | plain %.4f\n",
              r.gsl.accuracy, r.fd_init.accuracy, r.fd_wt.accuracy, r.plain.accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fractional-dilation network toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_path, graph_path, weights_path, gsl_graph, gsl_weights, fd_graph;
  std::string stage = "startup";

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, args);
  gen->callback([&] { stage = "gen-data"; run_gen_data(args); });

  CLI::App* tg = app.add_subcommand("train-gsl", "train the adaptive toy net");
  add_common(tg, args);
  tg->add_option("--data", data_path, "dataset file")->required();
  tg->callback([&] { stage = "train-gsl"; run_train_gsl(args, data_path); });

  CLI::App* is = app.add_subcommand("inspect-scales", "summarize predicted scales");
  add_common(is, args);
  is->add_option("--graph", graph_path, "graph JSON")->required();
  is->add_option("--weights", weights_path, "weight file")->required();
  is->add_option("--data", data_path, "dataset file")->required();
  is->callback([&] { stage = "inspect-scales"; run_inspect_scales(args, graph_path, weights_path, data_path); });

  CLI::App* de = app.add_subcommand("decompose", "rewrite frozen scales into branches");
  add_common(de, args);
  de->add_option("--graph", graph_path, "frozen graph JSON")->required();
  de->callback([&] { stage = "decompose"; run_decompose(args, graph_path); });

  CLI::App* tr = app.add_subcommand("transfer", "move trained weights into the rewrite");
  add_common(tr, args);
  tr->add_option("--gsl-graph", gsl_graph, "source graph JSON")->required();
  tr->add_option("--gsl-weights", gsl_weights, "source weight file")->required();
  tr->add_option("--fd-graph", fd_graph, "rewritten graph JSON")->required();
  tr->callback([&] { stage = "transfer"; run_transfer(args, gsl_graph, gsl_weights, fd_graph); });

  CLI::App* ft = app.add_subcommand("finetune", "finetune a rewritten net");
  add_common(ft, args);
  ft->add_option("--graph", graph_path, "graph JSON")->required();
  ft->add_option("--weights", weights_path, "weight file")->required();
  ft->add_option("--data", data_path, "dataset file")->required();
  ft->callback([&] { stage = "finetune"; run_finetune(args, graph_path, weights_path, data_path); });

  CLI::App* ev = app.add_subcommand("eval", "evaluate a model on a dataset");
  add_common(ev, args);
  ev->add_option("--graph", graph_path, "graph JSON")->required();
  ev->add_option("--weights", weights_path, "weight file")->required();
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->callback([&] { stage = "eval"; run_eval(args, graph_path, weights_path, data_path); });

  CLI::App* be = app.add_subcommand("bench", "time forward passes of the trunk variants");
  add_common(be, args);
  be->callback([&] { stage = "bench"; run_bench(args); });

  CLI::App* pl = app.add_subcommand("pipeline", "run every stage end to end");
  add_common(pl, args);
  pl->callback([&] { stage = "pipeline"; run_full_pipeline(args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error in %s: %s\n", stage.c_str(), e.what());
    return 1;
  }
  return 0;
}
