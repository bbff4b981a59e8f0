#include "lcdg/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <memory>
#include <random>

#include "lcdg/checkpoint.hpp"
#include "lcdg/error.hpp"
#include "lcdg/image_io.hpp"

namespace lcdg {

namespace fs = std::filesystem;

// ---- run directories and manifests ------------------------------------------

std::string output_root(const Config& cfg) {
  const char* env = std::getenv("LCDG_RUN_DIR");
  if (env && *env) return env;
  return cfg.get_str("out.root", "runs");
}

std::string make_run_dir(const std::string& root, const std::string& command,
                         const std::string& label) {
  fs::create_directories(root);
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    char nonce[16];
    std::snprintf(nonce, sizeof(nonce), "%08x", rd());
    std::string name = command;
    if (!label.empty()) name += "-" + label;
    name += std::string("-") + stamp + "-" + nonce;
    fs::path dir = fs::path(root) / name;
    std::error_code ec;
    if (fs::create_directory(dir, ec) && !ec) return dir.string();
    if (ec) throw Error("make_run_dir: cannot create '" + dir.string() + "': " + ec.message());
  }
  throw Error("make_run_dir: no unique name after 100 attempts under " + root);
}

void write_manifest(const std::string& run_dir, const std::string& command, const Config& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extras) {
  std::ofstream f(fs::path(run_dir) / "manifest.txt", std::ios::trunc);
  if (!f) throw Error("write_manifest: cannot write into " + run_dir);
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[40];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
  f << "# command: " << command << "\n# written: " << stamp << "\n";
  f << "# effective configuration\n" << cfg.to_string();
  if (!extras.empty()) {
    f << "# run facts\n";
    for (const auto& [k, v] : extras) f << k << " = " << v << "\n";
  }
  if (!f) throw Error("write_manifest: write failed in " + run_dir);
}

// ---- CSV ---------------------------------------------------------------------

namespace {

void check_cells(const std::vector<std::string>& cells) {
  for (const std::string& c : cells)
    if (c.find_first_of(",\"\n\r") != std::string::npos)
      throw ValueError("csv: cell '" + c + "' contains a delimiter");
}

std::string join_cells(const std::vector<std::string>& cells) {
  std::string line;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

}  // namespace

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns)
    : out_(path, std::ios::trunc), path_(path), ncols_(columns.size()) {
  if (!out_) throw Error("csv: cannot open " + path);
  if (columns.empty()) throw ValueError("csv: need at least one column");
  check_cells(columns);
  out_ << join_cells(columns);
  out_.flush();
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != ncols_)
    throw ValueError("csv: row width " + std::to_string(cells.size()) + " != header width " +
                     std::to_string(ncols_) + " in " + path_);
  check_cells(cells);
  out_ << join_cells(cells);
  out_.flush();
  if (!out_) throw Error("csv: write failed for " + path_);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_i(int64_t v) { return std::to_string(v); }

void write_loss_csv(const std::string& path, const TrainReport& report) {
  CsvWriter csv(path, {"step", "loss"});
  for (const auto& [step, loss] : report.loss_curve) csv.row({fmt_i(step), fmt_g(loss)});
}

// ---- config -> engine objects -------------------------------------------------

NoiseSchedule schedule_from(const Config& cfg) {
  return make_schedule(int(cfg.get_int("schedule.T", 1000)),
                       cfg.get_double("schedule.beta_start", 1e-4),
                       cfg.get_double("schedule.beta_end", 0.02));
}

DatasetConfig dataset_config_from(const Config& cfg) {
  DatasetConfig d;
  d.n = int(cfg.get_int("data.n", 512));
  d.seed = cfg.get_u64("data.seed", 0);
  d.channels = int(cfg.get_int("data.channels", 1));
  d.image_size = int(cfg.get_int("data.image_size", 32));
  d.val_frac = cfg.get_double("data.val_frac", 0.25);
  return d;
}

DenoiserConfig denoiser_config_from(const Config& cfg) {
  DenoiserConfig m;
  m.in_channels = int(cfg.get_int("data.channels", 1));
  m.image_size = int(cfg.get_int("data.image_size", 32));
  m.base_channels = int(cfg.get_int("model.base_channels", 32));
  m.num_classes = m.in_channels == 1 ? 4 : 12;
  m.pe_dim = int(cfg.get_int("model.pe_dim", 64));
  m.emb_dim = int(cfg.get_int("model.emb_dim", 128));
  return m;
}

ClassifierConfig classifier_config_from(const Config& cfg) {
  ClassifierConfig c;
  c.in_channels = int(cfg.get_int("data.channels", 1));
  c.image_size = int(cfg.get_int("data.image_size", 32));
  c.num_classes = 4;  // shape classes; color families are not a classifier target
  return c;
}

TimestepSampler tsampler_from(const Config& cfg) {
  TimestepSampler ts;
  std::string mode = cfg.get_str("resample.mode", "resampled");
  if (mode == "uniform")
    ts.mode = TimestepSampler::Mode::uniform;
  else if (mode == "resampled")
    ts.mode = TimestepSampler::Mode::resampled;
  else
    throw ConfigError("config: resample.mode must be uniform or resampled, got '" + mode + "'");
  ts.n = cfg.get_double("resample.n", 2.0);
  ts.T = int(cfg.get_int("schedule.T", 1000));
  return ts;
}

TrainOpts train_opts_from(const Config& cfg) {
  TrainOpts o;
  o.batch_size = int(cfg.get_int("train.batch_size", 16));
  o.lr = cfg.get_double("train.lr", 1e-4);
  o.seed = cfg.get_u64("train.seed", 0);
  o.p_uncond = cfg.get_double("train.p_uncond", 0.1);
  o.log_every = int(cfg.get_int("train.log_every", 50));
  o.divergence_factor = cfg.get_double("train.divergence_factor", 10.0);
  return o;
}

AdapterConfig adapter_config_from(const Config& cfg, const DenoiserModel<float>& den,
                                  CondKind kind) {
  AdapterConfig a;
  int sum = 0;
  for (const TapInfo& t : den.tap_spec()) sum += t.channels;
  a.in_channels = sum;
  a.cond_channels = cond_channels(kind);
  a.height = den.config().image_size;
  a.width = den.config().image_size;
  a.size_class = cfg.get_str("adapter.size_class", "default");
  a.pe_dim = int(cfg.get_int("model.pe_dim", 64));
  a.emb_dim = int(cfg.get_int("model.emb_dim", 128));
  return a;
}

void domain_guidance_defaults(CondKind kind, double& beta, double& t_frac) {
  switch (kind) {
    case CondKind::edge: beta = 2.0; t_frac = 0.5; return;
    case CondKind::stroke: beta = 2.5; t_frac = 0.65; return;
    case CondKind::palette: beta = 2.5; t_frac = 0.75; return;
    case CondKind::mask: beta = 2.0; t_frac = 0.6; return;
  }
  throw ValueError("domain_guidance_defaults: unknown condition kind");
}

namespace {

int trunc_from_frac(double frac, int T) {
  if (frac <= 0 || frac > 1)
    throw ConfigError("config: guidance.t_trunc_frac must lie in (0, 1], got " + fmt_g(frac));
  int t = int(std::llround(frac * T));
  if (t < 1) t = 1;
  if (t > T) t = T;
  return t;
}

}  // namespace

GuidanceConfig guidance_from(const Config& cfg, CondKind kind, int T) {
  double def_beta = 0, def_frac = 0;
  domain_guidance_defaults(kind, def_beta, def_frac);

  GuidanceConfig g;
  double beta = cfg.get_double("guidance.beta", -1);
  g.beta = beta < 0 ? def_beta : beta;
  double frac = cfg.get_double("guidance.t_trunc_frac", -1);
  g.t_trunc = trunc_from_frac(frac < 0 ? def_frac : frac, T);
  g.omega = cfg.get_double("guidance.omega", 6.0);

  double fixed = cfg.get_double("alpha.fixed", -1);
  if (fixed >= 0) {
    g.alpha_mode = AlphaMode::fixed;
    g.fixed_alpha = fixed;
  } else {
    g.alpha_mode = cfg.get_bool("alpha.norm_ratio", false) ? AlphaMode::norm_ratio
                                                           : AlphaMode::verbatim;
  }

  std::string kind_s = cfg.get_str("guidance.sampler", "ddpm");
  if (kind_s == "ddpm")
    g.kind = SamplerKind::ddpm;
  else if (kind_s == "ddim")
    g.kind = SamplerKind::ddim;
  else
    throw ConfigError("config: guidance.sampler must be ddpm or ddim, got '" + kind_s + "'");
  g.ddim_steps = int(cfg.get_int("guidance.ddim_steps", 50));
  g.ddim_eta = cfg.get_double("guidance.ddim_eta", 0.0);
  g.ssc = cfg.get_bool("guidance.ssc", false);
  g.seed = cfg.get_u64("sample.seed", 0);
  g.dump_every = int(cfg.get_int("guidance.dump_every", 0));
  validate_guidance(g, T);
  return g;
}

// ---- guided sampling driver ----------------------------------------------------

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {"fidelity", "frechet", "class_acc",
                                                "wall_ms_per_sample", "guided_steps"};
  return cols;
}

std::vector<std::string> metrics_row(const MetricsReport& m) {
  return {fmt_g(m.fidelity), fmt_g(m.frechet), fmt_g(m.class_acc), fmt_g(m.wall_ms_per_sample),
          fmt_i(m.guided_steps)};
}

GuidedRun run_guided(DenoiserModel<float>& den, ConditionAdapter<float>& adapter, CondKind kind,
                     const NoiseSchedule& sched, GuidanceConfig g, const DatasetItem& item,
                     int count, int cls, const std::string& dump_dir) {
  if (count < 1) throw ValueError("run_guided: count must be positive");
  GuidedRun out;
  out.target = eval_condition(item, kind);
  out.cls = cls < 0 ? item.label : cls;

  AdapterGuidedModel model(den, adapter);
  SampleRequest req;
  req.batch = count;
  req.channels = den.config().in_channels;
  req.height = den.config().image_size;
  req.width = den.config().image_size;
  req.cls.assign(size_t(count), out.cls);
  req.c_ext = images_to_tensor<float>(std::vector<Image>(size_t(count), out.target.map));

  std::string sample_ext = pnm_extension(req.channels);
  std::string cond_ext = pnm_extension(out.target.map.channels);
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    req.dump = [&, sample_ext, cond_ext, dump_dir](const StepTrace& tr, const Tensor<float>& z,
                                                   const Tensor<float>& cond) {
      std::string base = dump_dir + "/step_" + std::to_string(tr.level);
      write_pnm(base + "_sample." + sample_ext, tensor_to_image(z, 0));
      if (cond.defined())
        write_pnm(base + "_cond." + cond_ext, to_signed_range(tensor_to_image(cond, 0)));
    };
  }

  auto t0 = std::chrono::steady_clock::now();
  SampleResult res = sample_guided(model, sched, g, req);
  auto t1 = std::chrono::steady_clock::now();
  double total_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  out.samples.reserve(size_t(count));
  for (int i = 0; i < count; ++i) out.samples.push_back(tensor_to_image(res.z0, i));
  out.trace = std::move(res.trace);

  out.metrics.fidelity = fidelity_metric(out.samples, out.target);
  out.metrics.frechet = std::nan("");
  out.metrics.class_acc = std::nan("");
  out.metrics.wall_ms_per_sample = total_ms / double(count);
  for (const StepTrace& tr : out.trace)
    if (tr.guided) ++out.metrics.guided_steps;
  return out;
}

void score_with_classifier(GuidedRun& run, Classifier<float>& clf, const ProceduralDataset& data,
                           int ref_cap) {
  std::vector<int> shapes(run.samples.size(), run.cls % 4);
  run.metrics.class_acc = class_accuracy(clf, run.samples, shapes);

  std::vector<Image> ref;
  for (int idx : data.val_indices()) {
    if (int(ref.size()) >= ref_cap) break;
    ref.push_back(data.items[size_t(idx)].image);
  }
  try {
    run.metrics.frechet = frechet_feature_distance(run.samples, ref, clf);
  } catch (const ValueError&) {
    // Too few samples or references for a covariance fit; leave NaN.
  }
}

// ---- ablation -----------------------------------------------------------------

std::vector<std::string> default_grid(const std::string& axis) {
  if (axis == "beta") return {"0", "0.5", "1", "2", "4", "8"};
  if (axis == "t_trunc") return {"0.5", "0.6", "0.7", "0.8", "0.9"};
  if (axis == "n") return {"1", "2", "3", "5"};
  if (axis == "adapter_size") return {"default", "tiny"};
  throw ConfigError("ablate: unknown axis '" + axis +
                    "' (expected beta, t_trunc, n, or adapter_size)");
}

int ablation_run(AblationContext& ctx, const std::string& axis, std::vector<std::string> grid,
                 const std::string& run_dir) {
  default_grid(axis);  // validates the axis name
  if (!ctx.denoiser || !ctx.adapter || !ctx.data)
    throw ValueError("ablate: context needs a denoiser, an adapter, and a dataset");

  std::vector<std::string> cols = {"axis", "value"};
  for (const std::string& c : metrics_columns()) cols.push_back(c);
  CsvWriter csv((fs::path(run_dir) / "ablation.csv").string(), cols);
  if (grid.empty()) return 0;

  const int T = ctx.sched.T;
  const int count = int(ctx.cfg.get_int("ablate.samples", 64));
  const int train_steps = int(ctx.cfg.get_int("train.steps", 1000));
  const int cls = int(ctx.cfg.get_int("sample.cls", -1));
  const std::vector<int> val = ctx.data->val_indices();
  if (val.empty()) throw ValueError("ablate: dataset has no validation items");
  const DatasetItem& item =
      ctx.data->items[size_t(val[size_t(ctx.cfg.get_int("sample.cond_index", 0)) % val.size()])];

  std::vector<Image> sheet_tiles;
  const int per_point = count < 8 ? count : 8;

  for (const std::string& value : grid) {
    GuidanceConfig g = guidance_from(ctx.cfg, ctx.kind, T);

    // Point-local adapter: retraining axes build a fresh one on the budget.
    ConditionAdapter<float>* adapter = ctx.adapter;
    std::unique_ptr<ConditionAdapter<float>> local;
    Config pt = ctx.cfg;
    if (axis == "beta") {
      pt.set("guidance.beta", value);
      double b = pt.get_double("guidance.beta", 0);
      if (b < 0) throw ConfigError("ablate: beta grid value must be >= 0, got '" + value + "'");
      g.beta = b;
    } else if (axis == "t_trunc") {
      pt.set("guidance.t_trunc_frac", value);
      g.t_trunc = trunc_from_frac(pt.get_double("guidance.t_trunc_frac", 0.5), T);
    } else if (axis == "n" || axis == "adapter_size") {
      TimestepSampler ts = tsampler_from(pt);
      AdapterConfig acfg = ctx.adapter->config();
      if (axis == "n") {
        pt.set("resample.n", value);
        ts = tsampler_from(pt);
        ts.mode = TimestepSampler::Mode::resampled;
      } else {
        if (value != "default" && value != "tiny")
          throw ConfigError("ablate: adapter_size grid value must be default or tiny, got '" +
                            value + "'");
        acfg.size_class = value;
      }
      local = std::make_unique<ConditionAdapter<float>>(acfg, pt.get_u64("train.seed", 0));
      AdapterTrainer trainer(*local, *ctx.denoiser, *ctx.data, ctx.kind, ctx.sched, ts,
                             train_opts_from(pt));
      trainer.run(train_steps);
      adapter = local.get();
    }

    GuidedRun run = run_guided(*ctx.denoiser, *adapter, ctx.kind, ctx.sched, g, item, count, cls);
    if (ctx.classifier) score_with_classifier(run, *ctx.classifier, *ctx.data);

    std::vector<std::string> row = {axis, value};
    for (std::string& c : metrics_row(run.metrics)) row.push_back(std::move(c));
    csv.row(row);
    for (int i = 0; i < per_point; ++i) sheet_tiles.push_back(run.samples[size_t(i)]);
  }

  Image sheet = contact_sheet(sheet_tiles, per_point);
  write_pnm((fs::path(run_dir) / ("sheet." + pnm_extension(sheet.channels))).string(), sheet);
  return int(grid.size());
}

}  // namespace lcdg
