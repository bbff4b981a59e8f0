// Command-line front end: dataset generation, the three training loops,
// guided sampling, ablation sweeps, and the self-check commands. Every run
// creates a fresh directory under the output root (env LCDG_RUN_DIR beats the
// out.root key) holding a manifest that reproduces it exactly.
//
// Exit codes: 0 success, 1 generic failure, 2 configuration error,
// 3 checkpoint error, 4 training divergence.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lcdg/checkpoint.hpp"
#include "lcdg/config.hpp"
#include "lcdg/harness.hpp"
#include "lcdg/image_io.hpp"
#include "lcdg/model_io.hpp"
#include "lcdg/oracle.hpp"
#include "op_checks.hpp"  // shared finite-difference battery (tests/)

using namespace lcdg;
namespace fs = std::filesystem;

namespace {

// One long option per dotted config key; values land in stable storage so
// CLI11 references stay valid until parse time.
struct CmdCtx {
  std::string config_file;
  std::map<std::string, std::string> slots;
  std::vector<std::pair<std::string, CLI::Option*>> opts;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key = value configuration file");
    for (const ConfigKey& k : config_schema()) {
      auto& slot = slots[k.name];
      opts.emplace_back(k.name, cmd->add_option("--" + k.name, slot, k.help));
    }
  }

  Config effective() const {
    Config eff = default_config();
    if (!config_file.empty()) {
      Config file = Config::from_file(config_file);
      require_known_keys(file);
      eff.merge_from(file);
    }
    Config flags;
    for (const auto& [name, opt] : opts)
      if (opt->count() > 0) flags.set(name, slots.at(name));
    eff.merge_from(flags);
    require_known_keys(eff);
    return eff;
  }
};

using Extras = std::vector<std::pair<std::string, std::string>>;

int cfg_count(const Config& cfg, const std::string& key, int min_v) {
  int v = int(cfg.get_int(key, 0));
  if (v < min_v)
    throw ConfigError("config: " + key + " must be >= " + std::to_string(min_v) + ", got " +
                      std::to_string(v));
  return v;
}

std::string start_run(const Config& cfg, const std::string& command) {
  std::string run = make_run_dir(output_root(cfg), command, cfg.get_str("run.label", ""));
  std::cout << "run_dir = " << run << "\n";
  return run;
}

DenoiserModel<float> load_denoiser(const Config& cfg, Extras& extras) {
  std::string path = cfg.require_str("ckpt.denoiser");
  Checkpoint ck = load_checkpoint(path);
  extras.emplace_back("digest.denoiser", file_digest(path));
  return denoiser_from_checkpoint(ck);
}

ConditionAdapter<float> load_adapter(const Config& cfg, Extras& extras, CondKind* kind) {
  std::string path = cfg.require_str("ckpt.adapter");
  Checkpoint ck = load_checkpoint(path);
  extras.emplace_back("digest.adapter", file_digest(path));
  if (kind) *kind = cond_kind_from_name(adapter_domain(ck));
  return adapter_from_checkpoint(ck);
}

std::unique_ptr<Classifier<float>> maybe_classifier(const Config& cfg, Extras& extras) {
  std::string path = cfg.get_str("ckpt.classifier", "");
  if (path.empty()) return nullptr;
  Checkpoint ck = load_checkpoint(path);
  extras.emplace_back("digest.classifier", file_digest(path));
  return std::make_unique<Classifier<float>>(classifier_from_checkpoint(ck));
}

// Run a trainer in checkpoint_every-sized chunks, saving through `save`
// (which receives the step count) after every chunk and once at the end.
template <typename Trainer, typename SaveFn>
TrainReport run_chunked(Trainer& trainer, int steps, int every, SaveFn save) {
  TrainReport all;
  int done = 0;
  bool first = true;
  while (done < steps) {
    int chunk = every > 0 ? std::min(every, steps - done) : steps - done;
    TrainReport r = trainer.run(chunk);
    if (first) all.initial_loss = r.initial_loss;
    first = false;
    all.final_loss = r.final_loss;
    all.steps_done += r.steps_done;
    all.loss_curve.insert(all.loss_curve.end(), r.loss_curve.begin(), r.loss_curve.end());
    done += chunk;
    if (every > 0 && done < steps) save("step_" + std::to_string(trainer.step()));
  }
  save("final");
  return all;
}

int cmd_gen_data(const Config& cfg) {
  ProceduralDataset data = gen_dataset(dataset_config_from(cfg));
  std::string run = start_run(cfg, "gen-data");

  std::vector<int> counts(size_t(data.num_classes()), 0);
  for (const DatasetItem& it : data.items) ++counts[size_t(it.label)];
  CsvWriter csv(run + "/dataset_stats.csv", {"label", "count"});
  for (size_t k = 0; k < counts.size(); ++k) csv.row({fmt_i(int64_t(k)), fmt_i(counts[k])});

  std::vector<Image> preview;
  for (size_t i = 0; i < data.items.size() && i < 16; ++i) preview.push_back(data.items[i].image);
  std::string sheet = run + "/preview." + pnm_extension(data.cfg.channels);
  write_pnm(sheet, contact_sheet(preview, 4));

  write_manifest(run, "gen-data", cfg,
                 {{"data.items", fmt_i(int64_t(data.items.size()))},
                  {"data.classes", fmt_i(data.num_classes())}});
  std::cout << "wrote " << csv.path() << "\nwrote " << sheet << "\n";
  std::cout << "items = " << data.items.size() << "\n";
  return 0;
}

int cmd_train_denoiser(const Config& cfg) {
  int steps = cfg_count(cfg, "train.steps", 0);
  int every = cfg_count(cfg, "train.checkpoint_every", 0);
  ProceduralDataset data = gen_dataset(dataset_config_from(cfg));
  NoiseSchedule sched = schedule_from(cfg);
  TrainOpts opts = train_opts_from(cfg);

  Extras extras;
  std::string resume = cfg.get_str("train.resume", "");
  std::unique_ptr<DenoiserModel<float>> model;
  if (resume.empty()) {
    model = std::make_unique<DenoiserModel<float>>(denoiser_config_from(cfg), opts.seed);
  } else {
    Checkpoint ck = load_checkpoint(resume);
    model = std::make_unique<DenoiserModel<float>>(denoiser_from_checkpoint(ck));
  }
  DenoiserTrainer trainer(*model, data, sched, opts);
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    trainer.load_state(ck);
    extras.emplace_back("resume.from", resume);
  }

  std::string run = start_run(cfg, "train-denoiser");
  auto save = [&](const std::string& tag) {
    Checkpoint ck = checkpoint_from_denoiser(*model);
    trainer.save_state(ck);
    std::string path = run + (tag == "final" ? "/denoiser.lcdg" : "/denoiser_" + tag + ".lcdg");
    save_checkpoint(ck, path);
    std::cout << "wrote " << path << "\n";
  };
  TrainReport rep = run_chunked(trainer, steps, every, save);
  write_loss_csv(run + "/loss.csv", rep);

  extras.emplace_back("digest.denoiser", file_digest(run + "/denoiser.lcdg"));
  extras.emplace_back("loss.initial", fmt_g(rep.initial_loss));
  extras.emplace_back("loss.final", fmt_g(rep.final_loss));
  extras.emplace_back("steps.total", fmt_i(trainer.step()));
  write_manifest(run, "train-denoiser", cfg, extras);
  std::cout << "final_loss = " << fmt_g(rep.final_loss) << "\n";
  return 0;
}

int cmd_train_adapter(const Config& cfg) {
  int steps = cfg_count(cfg, "train.steps", 0);
  int every = cfg_count(cfg, "train.checkpoint_every", 0);
  ProceduralDataset data = gen_dataset(dataset_config_from(cfg));
  NoiseSchedule sched = schedule_from(cfg);
  TrainOpts opts = train_opts_from(cfg);
  CondKind kind = cond_kind_from_name(cfg.get_str("adapter.cond", "edge"));

  Extras extras;
  DenoiserModel<float> den = load_denoiser(cfg, extras);

  std::string resume = cfg.get_str("train.resume", "");
  std::unique_ptr<ConditionAdapter<float>> adapter;
  if (resume.empty()) {
    adapter = std::make_unique<ConditionAdapter<float>>(adapter_config_from(cfg, den, kind),
                                                        opts.seed);
  } else {
    Checkpoint ck = load_checkpoint(resume);
    if (adapter_domain(ck) != cond_kind_name(kind))
      throw ConfigError("config: adapter.cond is '" + cond_kind_name(kind) +
                        "' but the resume checkpoint holds a '" + adapter_domain(ck) +
                        "' adapter");
    adapter = std::make_unique<ConditionAdapter<float>>(adapter_from_checkpoint(ck));
    extras.emplace_back("resume.from", resume);
  }
  AdapterTrainer trainer(*adapter, den, data, kind, sched, tsampler_from(cfg), opts);
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    trainer.load_state(ck);
  }

  std::string run = start_run(cfg, "train-adapter");
  double held0 = eval_adapter_heldout(*adapter, den, data, kind, sched, 4, 16, opts.seed);
  auto save = [&](const std::string& tag) {
    Checkpoint ck = checkpoint_from_adapter(*adapter, cond_kind_name(kind));
    trainer.save_state(ck);
    std::string path = run + (tag == "final" ? "/adapter.lcdg" : "/adapter_" + tag + ".lcdg");
    save_checkpoint(ck, path);
    std::cout << "wrote " << path << "\n";
  };
  TrainReport rep = run_chunked(trainer, steps, every, save);
  write_loss_csv(run + "/loss.csv", rep);
  double held1 = eval_adapter_heldout(*adapter, den, data, kind, sched, 4, 16, opts.seed);

  CsvWriter metrics(run + "/metrics.csv", {"phase", "heldout_mse"});
  metrics.row({"initial", fmt_g(held0)});
  metrics.row({"final", fmt_g(held1)});

  extras.emplace_back("digest.adapter", file_digest(run + "/adapter.lcdg"));
  extras.emplace_back("heldout.initial", fmt_g(held0));
  extras.emplace_back("heldout.final", fmt_g(held1));
  write_manifest(run, "train-adapter", cfg, extras);
  std::cout << "heldout_initial = " << fmt_g(held0) << "\nheldout_final = " << fmt_g(held1)
            << "\n";
  return 0;
}

int cmd_train_classifier(const Config& cfg) {
  int steps = cfg_count(cfg, "train.steps", 0);
  int every = cfg_count(cfg, "train.checkpoint_every", 0);
  ProceduralDataset data = gen_dataset(dataset_config_from(cfg));
  TrainOpts opts = train_opts_from(cfg);

  Extras extras;
  std::string resume = cfg.get_str("train.resume", "");
  std::unique_ptr<Classifier<float>> clf;
  if (resume.empty()) {
    clf = std::make_unique<Classifier<float>>(classifier_config_from(cfg), opts.seed);
  } else {
    Checkpoint ck = load_checkpoint(resume);
    clf = std::make_unique<Classifier<float>>(classifier_from_checkpoint(ck));
  }
  ClassifierTrainer trainer(*clf, data, opts);
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    trainer.load_state(ck);
    extras.emplace_back("resume.from", resume);
  }

  std::string run = start_run(cfg, "train-classifier");
  auto save = [&](const std::string& tag) {
    Checkpoint ck = checkpoint_from_classifier(*clf);
    trainer.save_state(ck);
    std::string path =
        run + (tag == "final" ? "/classifier.lcdg" : "/classifier_" + tag + ".lcdg");
    save_checkpoint(ck, path);
    std::cout << "wrote " << path << "\n";
  };
  TrainReport rep = run_chunked(trainer, steps, every, save);
  write_loss_csv(run + "/loss.csv", rep);
  double acc = eval_classifier_heldout(*clf, data);

  CsvWriter metrics(run + "/metrics.csv", {"phase", "heldout_accuracy"});
  metrics.row({"final", fmt_g(acc)});

  extras.emplace_back("digest.classifier", file_digest(run + "/classifier.lcdg"));
  extras.emplace_back("heldout.accuracy", fmt_g(acc));
  write_manifest(run, "train-classifier", cfg, extras);
  std::cout << "heldout_accuracy = " << fmt_g(acc) << "\n";
  return 0;
}

const DatasetItem& condition_item(const Config& cfg, const ProceduralDataset& data) {
  std::vector<int> val = data.val_indices();
  if (val.empty()) throw ConfigError("config: dataset has no validation items");
  int idx = int(cfg.get_int("sample.cond_index", 0));
  if (idx < 0) throw ConfigError("config: sample.cond_index must be >= 0");
  return data.items[size_t(val[size_t(idx) % val.size()])];
}

int cmd_sample(const Config& cfg) {
  int count = cfg_count(cfg, "sample.count", 1);
  Extras extras;
  DenoiserModel<float> den = load_denoiser(cfg, extras);
  CondKind kind = CondKind::edge;
  ConditionAdapter<float> adapter = load_adapter(cfg, extras, &kind);
  std::unique_ptr<Classifier<float>> clf = maybe_classifier(cfg, extras);

  ProceduralDataset data = gen_dataset(dataset_config_from(cfg));
  NoiseSchedule sched = schedule_from(cfg);
  GuidanceConfig g = guidance_from(cfg, kind, sched.T);
  const DatasetItem& item = condition_item(cfg, data);

  std::string run = start_run(cfg, "sample");
  GuidedRun res = run_guided(den, adapter, kind, sched, g, item, count,
                             int(cfg.get_int("sample.cls", -1)),
                             g.dump_every > 0 ? run : "");
  if (clf) score_with_classifier(res, *clf, data);

  std::string ext = pnm_extension(den.config().in_channels);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "/sample_%03d.", i);
    write_pnm(run + name + ext, res.samples[size_t(i)]);
  }
  write_pnm(run + "/target." + pnm_extension(res.target.map.channels),
            to_signed_range(res.target.map));

  std::vector<std::string> mcols = {"count"};
  for (const std::string& c : metrics_columns()) mcols.push_back(c);
  CsvWriter metrics(run + "/metrics.csv", mcols);
  std::vector<std::string> mrow = {fmt_i(count)};
  for (std::string& c : metrics_row(res.metrics)) mrow.push_back(std::move(c));
  metrics.row(mrow);

  CsvWriter trace(run + "/trace.csv",
                  {"level", "t_index", "guided", "distance", "alpha", "grad_norm", "millis"});
  for (const StepTrace& tr : res.trace)
    trace.row({fmt_i(tr.level), fmt_i(tr.t_index), tr.guided ? "1" : "0", fmt_g(tr.distance),
               fmt_g(tr.alpha), fmt_g(tr.grad_norm), fmt_g(tr.millis)});

  extras.emplace_back("sample.class", fmt_i(res.cls));
  extras.emplace_back("condition", cond_kind_name(kind));
  extras.emplace_back("fidelity", fmt_g(res.metrics.fidelity));
  write_manifest(run, "sample", cfg, extras);
  std::cout << "condition = " << cond_kind_name(kind) << "\n"
            << "fidelity = " << fmt_g(res.metrics.fidelity) << "\n"
            << "guided_steps = " << res.metrics.guided_steps << "\n"
            << "wall_ms_per_sample = " << fmt_g(res.metrics.wall_ms_per_sample) << "\n";
  return 0;
}

int cmd_ablate(const Config& cfg) {
  Extras extras;
  DenoiserModel<float> den = load_denoiser(cfg, extras);
  CondKind kind = CondKind::edge;
  ConditionAdapter<float> adapter = load_adapter(cfg, extras, &kind);
  std::unique_ptr<Classifier<float>> clf = maybe_classifier(cfg, extras);

  ProceduralDataset data = gen_dataset(dataset_config_from(cfg));

  std::string axis = cfg.get_str("ablate.axis", "beta");
  std::vector<std::string> grid;
  std::string raw = cfg.get_str("ablate.grid", "");
  if (raw.empty()) {
    grid = default_grid(axis);
  } else {
    std::string cur;
    for (char c : raw + ",") {
      if (c == ',') {
        if (!cur.empty()) grid.push_back(cur);
        cur.clear();
      } else if (c != ' ') {
        cur += c;
      }
    }
  }

  AblationContext ctx;
  ctx.cfg = cfg;
  ctx.denoiser = &den;
  ctx.adapter = &adapter;
  ctx.classifier = clf.get();
  ctx.data = &data;
  ctx.sched = schedule_from(cfg);
  ctx.kind = kind;

  std::string run = start_run(cfg, "ablate");
  int rows = ablation_run(ctx, axis, grid, run);

  extras.emplace_back("ablate.axis", axis);
  extras.emplace_back("ablate.points", fmt_i(rows));
  write_manifest(run, "ablate", cfg, extras);
  std::cout << "wrote " << run << "/ablation.csv\npoints = " << rows << "\n";
  return 0;
}

int cmd_gradcheck(const Config& cfg) {
  int seeds = cfg_count(cfg, "gradcheck.seeds", 1);
  double tol = cfg.get_double("gradcheck.tol", 1e-4);

  std::string run = start_run(cfg, "gradcheck");
  std::map<std::string, double> worst;
  for (int s = 0; s < seeds; ++s)
    for (const lcdg_test::OpCheck& c : lcdg_test::run_op_gradchecks(uint64_t(s)))
      worst[c.name] = std::max(worst[c.name], c.result.max_rel);

  CsvWriter csv(run + "/gradcheck.csv", {"op", "max_rel_err"});
  double overall = 0;
  for (const auto& [op, rel] : worst) {
    csv.row({op, fmt_g(rel)});
    overall = std::max(overall, rel);
  }
  write_manifest(run, "gradcheck", cfg,
                 {{"gradcheck.worst", fmt_g(overall)}, {"gradcheck.ops", fmt_i(int64_t(worst.size()))}});
  std::cout << "ops = " << worst.size() << "\nseeds = " << seeds
            << "\nworst_rel = " << fmt_g(overall) << "\n";
  if (overall > tol) throw Error("gradcheck: worst relative error " + fmt_g(overall) +
                                 " exceeds tolerance " + fmt_g(tol));
  std::cout << "gradcheck = pass\n";
  return 0;
}

int cmd_oracle_check(const Config& cfg) {
  NoiseSchedule sched = schedule_from(cfg);
  int chains = cfg_count(cfg, "oracle.chains", 2);
  double tol_se = cfg.get_double("oracle.tol_se", 3.0);

  AnalyticWorld w;
  w.m = 0.7;
  w.s = 0.4;
  w.c = -0.3;
  AnalyticGuidedModel model(w, sched);
  const int pix = w.height * w.width;

  struct Case {
    std::string name;
    GuidanceConfig g;
  };
  std::vector<Case> cases;
  {
    GuidanceConfig unguided;
    cases.push_back({"ddpm_unguided", unguided});
    GuidanceConfig guided;
    guided.beta = 2.0;
    guided.alpha_mode = AlphaMode::fixed;
    guided.fixed_alpha = 1.0;
    guided.t_trunc = std::max(1, sched.T / 2);
    guided.ssc = true;
    cases.push_back({"ddpm_guided_ssc", guided});
    if (sched.T % 5 == 0) {
      GuidanceConfig strided = guided;
      strided.kind = SamplerKind::ddim;
      strided.ddim_steps = sched.T / 5;
      strided.ddim_eta = 0.8;
      strided.ssc = false;
      cases.push_back({"ddim_noisy_guided", strided});
    }
  }

  std::string run = start_run(cfg, "oracle-check");
  CsvWriter csv(run + "/oracle.csv",
                {"case", "mean_dev_se", "var_rel_dev", "closed_mean", "closed_var"});
  bool ok = true;
  for (Case& c : cases) {
    c.g.seed = 31337;
    SampleRequest req;
    req.batch = chains;
    req.channels = 1;
    req.height = w.height;
    req.width = w.width;
    req.cls.assign(size_t(chains), 0);
    req.c_ext = Tensor<float>::full({chains, 1, w.height, w.width}, float(w.c));

    SampleResult r = sample_guided(model, sched, c.g, req);
    double sum = 0, sq = 0;
    const auto& v = r.z0.values();
    for (float x : v) {
      sum += x;
      sq += double(x) * x;
    }
    double n = double(v.size());
    double mean = sum / n, var = sq / n - mean * mean;

    ChainMoments cm = propagate_moments(w, sched, c.g);
    double se = std::sqrt(cm.var / (double(chains) * pix));
    double mean_dev = std::fabs(mean - cm.mean) / se;
    double var_rel = std::fabs(var - cm.var) / cm.var;
    csv.row({c.name, fmt_g(mean_dev), fmt_g(var_rel), fmt_g(cm.mean), fmt_g(cm.var)});
    std::cout << c.name << ": mean_dev_se = " << fmt_g(mean_dev)
              << ", var_rel_dev = " << fmt_g(var_rel) << "\n";
    // Variance of a variance estimate scales like var * sqrt(2/n).
    if (mean_dev > tol_se || var_rel > tol_se * std::sqrt(2.0 / (double(chains) * pix)))
      ok = false;
  }
  write_manifest(run, "oracle-check", cfg, {{"oracle.cases", fmt_i(int64_t(cases.size()))}});
  if (!ok) throw Error("oracle-check: sampled moments deviate from the closed form");
  std::cout << "oracle = pass\n";
  return 0;
}

int cmd_describe(const Config& cfg) {
  NoiseSchedule sched = schedule_from(cfg);
  DenoiserModel<float> den(denoiser_config_from(cfg), 0);
  CondKind kind = cond_kind_from_name(cfg.get_str("adapter.cond", "edge"));
  AdapterConfig acfg = adapter_config_from(cfg, den, kind);
  ConditionAdapter<float> adapter(acfg, 0);
  AdapterConfig tiny_cfg = acfg;
  tiny_cfg.size_class = "tiny";
  ConditionAdapter<float> tiny(tiny_cfg, 0);
  Classifier<float> clf(classifier_config_from(cfg), 0);

  char hex[32];
  std::cout << "schedule.T = " << sched.T << "\n";
  std::cout << "schedule.abar_first = " << fmt_g(sched.alpha_bars[0]) << "\n";
  std::cout << "schedule.abar_last = " << fmt_g(sched.alpha_bars[size_t(sched.T) - 1]) << "\n";
  std::cout << "denoiser.params = " << den.param_count() << "\n";
  std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)den.arch_hash());
  std::cout << "denoiser.arch_hash = " << hex << "\n";
  std::cout << "denoiser.taps = " << tap_spec_string(den.tap_spec()) << "\n";
  std::cout << "adapter.cond = " << cond_kind_name(kind) << "\n";
  std::cout << "adapter.default.params = " << adapter.param_count() << "\n";
  std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)adapter.arch_hash());
  std::cout << "adapter.default.arch_hash = " << hex << "\n";
  std::cout << "adapter.tiny.params = " << tiny.param_count() << "\n";
  std::cout << "classifier.params = " << clf.param_count() << "\n";

  std::string run = start_run(cfg, "describe");
  write_manifest(run, "describe", cfg,
                 {{"denoiser.params", fmt_i(den.param_count())},
                  {"adapter.default.params", fmt_i(adapter.param_count())},
                  {"adapter.tiny.params", fmt_i(tiny.param_count())},
                  {"classifier.params", fmt_i(clf.param_count())}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guided-diffusion workbench"};
  app.require_subcommand(1);

  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Config&);
  };
  const std::vector<Cmd> cmds = {
      {"gen-data", "generate the procedural dataset and report statistics", cmd_gen_data},
      {"train-denoiser", "train the class-conditional denoiser", cmd_train_denoiser},
      {"train-adapter", "train a condition adapter against a frozen denoiser",
       cmd_train_adapter},
      {"train-classifier", "train the shape classifier used for metrics", cmd_train_classifier},
      {"sample", "draw guided samples against a dataset condition", cmd_sample},
      {"ablate", "sweep one knob and record metrics per grid point", cmd_ablate},
      {"gradcheck", "finite-difference check of every differentiable op", cmd_gradcheck},
      {"oracle-check", "compare sampled moments with the closed-form chain", cmd_oracle_check},
      {"describe", "print model sizes, architecture hashes, and the tap layout", cmd_describe},
  };

  std::vector<std::unique_ptr<CmdCtx>> ctxs;
  std::vector<std::pair<CLI::App*, const Cmd*>> wired;
  for (const Cmd& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    ctxs.push_back(std::make_unique<CmdCtx>());
    ctxs.back()->attach(sub);
    wired.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // unknown flags and bad values are config errors
  }

  try {
    for (size_t i = 0; i < wired.size(); ++i)
      if (wired[i].first->parsed()) return wired[i].second->fn(ctxs[i]->effective());
    throw ConfigError("no subcommand chosen");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
