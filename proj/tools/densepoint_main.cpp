// Command-line surface: count/train/eval/gradcheck/bench/synth subcommands
// over the run-configuration schema. Flags mirror every config key (dotted
// and, where unambiguous, bare names); precedence is flags > config file >
// defaults, applied left to right like config-file lines. The effective
// configuration is printed to stderr before the command body runs, and every
// failure exits nonzero with a single `error: ...` line on stderr.
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpt/checkpoint.hpp"
#include "dpt/config.hpp"
#include "dpt/gradcheck.hpp"
#include "dpt/training.hpp"

namespace fs = std::filesystem;
using namespace dpt;

namespace {

// --- flag plumbing ---------------------------------------------------------------

// Collects schema-driven flags for one subcommand and replays them onto a
// RunConfig in command-line order, so `--growth 12 --preset classification`
// behaves exactly like the same two lines in a config file.
struct FlagContext {
  CLI::App* cmd = nullptr;
  CLI::Option* config_opt = nullptr;
  std::map<const CLI::Option*, std::function<void(RunConfig&, const std::string&)>> handler;

  void add_schema_flags() {
    std::map<std::string, int> bare_uses;
    for (const SchemaEntry& e : config_schema()) ++bare_uses[e.key];
    // keys shared between sections get explicit united flags below instead
    for (const char* k : {"points", "seed", "votes"}) bare_uses[k] = 2;

    for (const SchemaEntry& e : config_schema()) {
      std::string names = "--" + e.section + "." + e.key;
      if (bare_uses[e.key] == 1) names += ",--" + e.key;
      CLI::Option* opt = cmd->add_option(names, e.help)
                             ->type_name(e.type)
                             ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
                             ->group("[" + e.section + "]");
      const std::string dotted = e.section + "." + e.key;
      handler[opt] = [dotted](RunConfig& c, const std::string& v) {
        apply_override(c, dotted, v);
      };
    }

    CLI::Option* points =
        cmd->add_option("--points", "sets network.points and data.points together")
            ->type_name("uint")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
            ->group("general");
    handler[points] = [](RunConfig& c, const std::string& v) {
      apply_override(c, "network.points", v);
      apply_override(c, "data.points", v);
    };
    CLI::Option* seed = cmd->add_option("--seed", "shorthand for train.seed")
                            ->type_name("uint")
                            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
                            ->group("general");
    handler[seed] = [](RunConfig& c, const std::string& v) {
      apply_override(c, "train.seed", v);
    };
    CLI::Option* votes = cmd->add_option("--votes", "shorthand for eval.votes")
                             ->type_name("uint")
                             ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
                             ->group("general");
    handler[votes] = [](RunConfig& c, const std::string& v) {
      apply_override(c, "eval.votes", v);
    };
    CLI::Option* set = cmd->add_option("--set", "extra override, section.key=value")
                           ->type_name("KEY=VALUE")
                           ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
                           ->group("general");
    handler[set] = [](RunConfig& c, const std::string& v) {
      size_t eq = v.find('=');
      if (eq == std::string::npos) fail("--set expects section.key=value, got '" + v + "'");
      apply_override(c, v.substr(0, eq), v.substr(eq + 1));
    };
    config_opt = cmd->add_option("--config", "config file applied before any flag")
                     ->type_name("FILE")
                     ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
                     ->group("general");
  }

  RunConfig merge() const {
    RunConfig cfg;
    if (config_opt->count()) apply_config_file(cfg, config_opt->as<std::string>());
    std::map<const CLI::Option*, size_t> cursor;
    for (const CLI::Option* o : cmd->parse_order()) {
      auto it = handler.find(o);
      if (it == handler.end()) continue;
      const auto& res = o->results();
      size_t& i = cursor[o];
      if (i < res.size()) it->second(cfg, res[i++]);
    }
    return cfg;
  }
};

// --- shared helpers ---------------------------------------------------------------

Dataset make_dataset(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  if (d.source == "synthetic") {
    SyntheticShapeSpec spec;
    spec.families = d.families;
    spec.points = d.points;
    spec.jitter = d.jitter;
    spec.train_per_class = d.train_per_class;
    spec.test_per_class = d.test_per_class;
    spec.seed = d.seed;
    return make_synthetic(spec);
  }
  if (d.source == "dir") {
    if (d.dir.empty()) fail("data.source=dir requires data.dir");
    fs::path manifest = d.manifest.empty() ? fs::path() : fs::path(d.manifest);
    if (!manifest.empty() && manifest.is_relative()) manifest = fs::path(d.dir) / manifest;
    return load_xyz_dir(d.dir, manifest.string(), d.points, d.seed);
  }
  if (d.source == "cache") {
    if (d.cache.empty()) fail("data.source=cache requires data.cache");
    return load_cache(d.cache);
  }
  fail("unknown data.source '" + d.source + "'");
}

void check_compat(const NetworkConfig& net, const Dataset& ds) {
  if (ds.samples.empty()) fail("dataset is empty");
  size_t pts = ds.samples.front().num_points();
  if (net.points != pts)
    fail("network.points = " + std::to_string(net.points) + " but dataset samples hold " +
         std::to_string(pts) + " points (set --points consistently)");
  if (net.task == Task::Classification && net.classes != ds.num_classes())
    fail("network.classes = " + std::to_string(net.classes) + " but dataset has " +
         std::to_string(ds.num_classes()) + " classes");
  if (net.task == Task::PartSegmentation) {
    if (net.classes != ds.num_parts())
      fail("network.classes = " + std::to_string(net.classes) +
           " (part count) but dataset has " + std::to_string(ds.num_parts()) + " parts");
    if (net.one_hot_dim > 0 && net.one_hot_dim != ds.num_classes())
      fail("network.one_hot_dim = " + std::to_string(net.one_hot_dim) + " but dataset has " +
           std::to_string(ds.num_classes()) + " object classes");
  }
  if (net.task == Task::NormalEstimation)
    for (const PointCloud& pc : ds.samples)
      if (!pc.normals.defined()) fail("normal-estimation dataset sample lacks normals");
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail("cannot write '" + p.string() + "'");
  out << text;
  if (!out) fail("write failed for '" + p.string() + "'");
}

std::string cost_report_tsv(const CostReport& rep) {
  std::ostringstream os;
  os << "layer\tkind\tparams\tflops\tout_channels\tout_points\n";
  for (const CostRow& r : rep.rows)
    os << r.name << '\t' << r.kind << '\t' << r.params << '\t' << fmt_g(r.flops) << '\t'
       << r.out_channels << '\t' << r.out_points << '\n';
  os << "total\t\t" << rep.total.params << '\t' << fmt_g(rep.total.flops) << "\t\t\n";
  const CostBreakdown& b = rep.flop_breakdown;
  os << "# flop convention: 1 multiply-accumulate = 2 flops; evaluation-mode forward, one sample\n";
  os << "# flop breakdown: expansion_slp=" << fmt_g(b.expansion_slp)
     << " integration_slp=" << fmt_g(b.integration_slp) << " norm=" << fmt_g(b.norm)
     << " fc=" << fmt_g(b.fc) << " other=" << fmt_g(b.other) << " total=" << fmt_g(b.total())
     << "\n";
  return os.str();
}

// --- commands ---------------------------------------------------------------------

int cmd_count(const RunConfig& cfg, const std::string& sweep) {
  fs::create_directories(cfg.out_dir);
  if (sweep.empty()) {
    auto net = build_network(cfg.network, cfg.train.seed);
    CostReport rep = count_flops(*net, cfg.network.points);
    std::string doc = cost_report_tsv(rep);
    std::cout << doc;
    write_text(fs::path(cfg.out_dir) / "count.tsv", doc);
    return 0;
  }

  size_t eq = sweep.find('=');
  if (eq == std::string::npos) fail("--sweep expects ng=v1,v2,... or k=v1,v2,...");
  const std::string what = sweep.substr(0, eq);
  if (what != "ng" && what != "k") fail("--sweep supports ng=... or k=..., got '" + what + "'");
  std::vector<int> values;
  {
    std::istringstream is(sweep.substr(eq + 1));
    for (std::string tok; std::getline(is, tok, ',');) values.push_back(std::stoi(tok));
  }
  if (values.empty()) fail("--sweep needs at least one value");

  std::ostringstream os;
  os << "sweep\tvalue\tparams\tflops\n";
  for (int v : values) {
    NetworkConfig nc = cfg.network;
    if (what == "ng") {
      nc.groups = v;
    } else {
      // growth sweep regenerates the classification preset at that width
      nc = classification_config(size_t(v), cfg.network.groups, cfg.network.classes,
                                 cfg.network.connectivity);
      nc.points = cfg.network.points;
    }
    auto net = build_network(nc, cfg.train.seed);
    CostReport rep = count_flops(*net, nc.points);
    os << what << '\t' << v << '\t' << rep.total.params << '\t' << fmt_g(rep.total.flops) << '\n';
  }
  std::cout << os.str();
  write_text(fs::path(cfg.out_dir) / "sweep.tsv", os.str());
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  Dataset ds = make_dataset(cfg);
  check_compat(cfg.network, ds);
  auto net = build_network(cfg.network, cfg.train.seed);
  fs::create_directories(cfg.out_dir);
  const fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.bin";
  const fs::path log_path = fs::path(cfg.out_dir) / "train_log.tsv";

  if (cfg.train.epochs == 0) {
    save_checkpoint(ckpt.string(), net->store.all_records());
    write_text(log_path, "");
    std::cout << "epochs = 0: wrote the initialization checkpoint to " << ckpt.string() << "\n";
    return 0;
  }

  std::cout << "# epoch\ttrain_loss\ttrain_acc\ttest_acc\tseconds\n";
  TrainResult result = train(*net, ds, cfg.train, &std::cout);
  save_checkpoint(ckpt.string(), net->store.all_records());

  std::ostringstream log;
  for (const EpochLog& e : result.log) log << format_epoch(e) << "\n";
  write_text(log_path, log.str());

  std::cout << "checkpoint\t" << ckpt.string() << "\n";
  std::cout << "final_test_accuracy\t" << fmt_g(result.final_test.accuracy) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  if (cfg.eval.checkpoint.empty()) fail("eval requires --checkpoint");
  Dataset ds = make_dataset(cfg);
  check_compat(cfg.network, ds);
  auto net = build_network(cfg.network, cfg.train.seed);
  std::vector<Parameter> records = net->store.all_records();
  load_checkpoint(cfg.eval.checkpoint, records);

  if (cfg.network.task == Task::Classification) {
    AugmentSpec scales;
    scales.scale_lo = cfg.eval.scale_lo;
    scales.scale_hi = cfg.eval.scale_hi;
    scales.translate = 0.0;
    VotingResult vr = evaluate_voting(*net, ds, cfg.eval.votes, Rng(cfg.eval.seed), scales,
                                      cfg.train.batch_size);
    std::cout << "votes\t" << cfg.eval.votes << "\n";
    std::cout << "accuracy\t" << fmt_g(vr.metrics.accuracy) << "\n";
    for (size_t c = 0; c < vr.metrics.per_class_accuracy.size(); ++c)
      std::cout << "class_accuracy\t" << ds.class_names[c] << '\t'
                << fmt_g(vr.metrics.per_class_accuracy[c]) << "\n";

    if (!cfg.eval.dump.empty()) {
      std::vector<size_t> test = ds.test_indices();
      std::ostringstream os;
      os << "id\tlabel\tpred\tmax_prob\n";
      size_t classes = vr.probabilities.size(1);
      for (size_t i = 0; i < test.size(); ++i) {
        double best = 0.0;
        for (size_t c = 0; c < classes; ++c)
          best = std::max(best, vr.probabilities.at({i, c}));
        os << test[i] << '\t' << ds.samples[test[i]].label << '\t' << vr.predictions[i] << '\t'
           << fmt_g(best) << "\n";
      }
      write_text(cfg.eval.dump, os.str());
      std::cout << "dump\t" << cfg.eval.dump << "\n";
    }
    return 0;
  }

  if (!cfg.eval.dump.empty()) fail("per-sample dump supports classification only");
  Metrics m = evaluate(*net, ds, 1, cfg.train.batch_size);
  std::cout << "accuracy\t" << fmt_g(m.accuracy) << "\n";
  if (cfg.network.task == Task::PartSegmentation) {
    std::cout << "class_miou\t" << fmt_g(m.class_miou) << "\n";
    std::cout << "instance_miou\t" << fmt_g(m.instance_miou) << "\n";
  } else {
    std::cout << "mean_angle_deg\t" << fmt_g(m.mean_angle_deg) << "\n";
    std::cout << "mean_one_minus_cos\t" << fmt_g(m.mean_one_minus_cos) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  auto cases = run_gradcheck_suite(cfg.train.seed);
  bool all_pass = true;
  std::cout << "op\tmax_rel_err\tstatus\n";
  for (const GradCheckCase& c : cases) {
    std::cout << c.op << '\t' << fmt_g(c.max_rel_err) << '\t' << (c.pass ? "pass" : "fail")
              << "\n";
    all_pass &= c.pass;
  }
  std::cout << "gradcheck\t" << (all_pass ? "pass" : "fail") << "\n";
  return all_pass ? 0 : 1;
}

int cmd_bench(const RunConfig& cfg) {
  auto net = build_network(cfg.network, cfg.train.seed);
  Rng rng(cfg.data.seed);

  // One batch of uniform unit-ball clouds; labels exist for one-hot tasks.
  std::vector<PointCloud> batch;
  for (size_t b = 0; b < cfg.bench.batch; ++b) {
    Tensor coords({3, cfg.network.points});
    for (size_t j = 0; j < cfg.network.points; ++j) {
      double v[3], norm = 0.0;
      for (double& vi : v) {
        vi = rng.normal();
        norm += vi * vi;
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      double r = std::cbrt(rng.uniform());
      for (size_t c = 0; c < 3; ++c) coords.data()[c * cfg.network.points + j] = v[c] / norm * r;
    }
    PointCloud pc = PointCloud::from_coords(coords);
    pc.label = 0;
    batch.push_back(std::move(pc));
  }

  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  auto measure = [&](bool with_backward) {
    std::vector<double> ms;
    for (size_t i = 0; i < cfg.bench.warmup + cfg.bench.reps; ++i) {
      Rng pass_rng = rng.fork(1000 + i);
      auto t0 = std::chrono::steady_clock::now();
      if (with_backward) {
        ForwardOptions opts;
        opts.training = true;
        opts.rng = &pass_rng;
        Tensor loss = sum_all(net->forward(batch, opts));
        for (Parameter& p : net->store.params) p.tensor.zero_grad();
        backward(loss);
      } else {
        NoGradGuard ng;
        ForwardOptions opts;
        opts.rng = &pass_rng;
        net->forward(batch, opts);
      }
      auto t1 = std::chrono::steady_clock::now();
      if (i >= cfg.bench.warmup)
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return ms;
  };

  std::ostringstream os;
  os << "mode\tbatch\tpoints\treps\tmedian_ms\tmin_ms\tmax_ms\n";
  for (bool bwd : {false, true}) {
    std::vector<double> ms = measure(bwd);
    os << (bwd ? "forward_backward" : "forward") << '\t' << cfg.bench.batch << '\t'
       << cfg.network.points << '\t' << cfg.bench.reps << '\t'
       << fmt_g(median_of(ms)) << '\t' << fmt_g(*std::min_element(ms.begin(), ms.end())) << '\t'
       << fmt_g(*std::max_element(ms.begin(), ms.end())) << '\n';
  }
  std::cout << os.str();
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "bench.tsv", os.str());
  return 0;
}

int cmd_synth(const RunConfig& cfg) {
  RunConfig synth_cfg = cfg;
  synth_cfg.data.source = "synthetic";
  Dataset ds = make_dataset(synth_cfg);
  fs::create_directories(cfg.out_dir);
  save_xyz_dir(ds, cfg.out_dir, cfg.data.manifest.empty() ? "manifest.tsv" : cfg.data.manifest);
  if (!cfg.data.cache.empty()) {
    save_cache(ds, cfg.data.cache);
    std::cout << "cache\t" << cfg.data.cache << "\n";
  }
  size_t train_n = ds.train_indices().size(), test_n = ds.test_indices().size();
  std::cout << "dir\t" << cfg.out_dir << "\n";
  std::cout << "classes\t" << ds.num_classes() << "\n";
  std::cout << "parts\t" << ds.num_parts() << "\n";
  std::cout << "train_samples\t" << train_n << "\n";
  std::cout << "test_samples\t" << test_n << "\n";
  std::cout << "points_per_sample\t" << cfg.data.points << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "point-cloud deep-learning toolkit: dense-connectivity point convolutions,\n"
      "parameter/flop accounting, desk-scale training, and dataset utilities"};
  app.require_subcommand(1);

  struct Sub {
    FlagContext flags;
    CLI::App* cmd = nullptr;
  };
  std::map<std::string, Sub> subs;
  auto add_sub = [&](const char* name, const char* desc) -> Sub& {
    Sub& s = subs[name];
    s.cmd = app.add_subcommand(name, desc);
    s.flags.cmd = s.cmd;
    s.flags.add_schema_flags();
    return s;
  };

  Sub& count = add_sub("count", "parameter / flop census of the configured network");
  std::string sweep;
  count.cmd
      ->add_option("--sweep", sweep,
                   "census table across ng=v1,v2,... (group counts on the current network) "
                   "or k=v1,v2,... (growth widths of the classification preset)")
      ->type_name("AXIS=V1,V2,...");

  add_sub("train", "train on the configured dataset; writes checkpoint.bin and train_log.tsv");
  Sub& eval = add_sub("eval", "evaluate a checkpoint (classification applies test-time voting)");
  eval.cmd->add_option("CHECKPOINT", "checkpoint file (same as --checkpoint)")
      ->type_name("FILE");
  // positional convenience: route through the same handler machinery
  eval.flags.handler[eval.cmd->get_option("CHECKPOINT")] = [](RunConfig& c,
                                                              const std::string& v) {
    apply_override(c, "eval.checkpoint", v);
  };
  add_sub("gradcheck", "finite-difference check of every op and composite layer");
  add_sub("bench", "forward / forward+backward wall-time per batch (median over reps)");
  add_sub("synth", "generate the synthetic dataset as .xyz files (and optional binary cache)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }

  try {
    for (auto& [name, sub] : subs) {
      if (!sub.cmd->parsed()) continue;
      RunConfig cfg = sub.flags.merge();
      std::cerr << "# effective configuration (" << name << ")\n"
                << serialize_config(cfg) << std::flush;
      if (name == "count") return cmd_count(cfg, sweep);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg);
      if (name == "gradcheck") return cmd_gradcheck(cfg);
      if (name == "bench") return cmd_bench(cfg);
      if (name == "synth") return cmd_synth(cfg);
    }
    fail("no subcommand selected");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << std::endl;
    return 1;
  }
}
