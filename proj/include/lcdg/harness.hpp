#pragma once

// Run orchestration shared by the command-line tool and the acceptance gate:
// unique run directories with reproduction manifests, schema-stable CSV
// output, config-to-engine translation, a guided-sampling driver that turns
// one condition item into samples plus metrics, and the one-axis ablation
// sweep.

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lcdg/adapter.hpp"
#include "lcdg/config.hpp"
#include "lcdg/conditions.hpp"
#include "lcdg/dataset.hpp"
#include "lcdg/diffusion.hpp"
#include "lcdg/image.hpp"
#include "lcdg/metrics.hpp"
#include "lcdg/sampler.hpp"
#include "lcdg/training.hpp"
#include "lcdg/unet.hpp"

namespace lcdg {

// ---- run directories and manifests ------------------------------------------

// Output root: env LCDG_RUN_DIR if set, else the out.root config key.
std::string output_root(const Config& cfg);

// Create root/<command>[-label]-<stamp>-<nonce>/ and return its path. The
// nonce retries on collision, so concurrent runs never share a directory.
std::string make_run_dir(const std::string& root, const std::string& command,
                         const std::string& label = "");

// manifest.txt inside run_dir: the command, every effective config key, and
// the extras (seeds, checkpoint digests) — enough to reproduce the run.
void write_manifest(const std::string& run_dir, const std::string& command, const Config& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extras = {});

// ---- CSV ---------------------------------------------------------------------

// Header-first CSV writer. Cells must not contain commas, quotes, or
// newlines; rows must match the header width.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns);
  void row(const std::vector<std::string>& cells);
  const std::string& path() const { return path_; }

 private:
  std::ofstream out_;
  std::string path_;
  size_t ncols_;
};

std::string fmt_g(double v);    // "%.12g"
std::string fmt_i(int64_t v);

// loss-curve CSV (columns step,loss) from a training report.
void write_loss_csv(const std::string& path, const TrainReport& report);

// ---- config -> engine objects -------------------------------------------------

NoiseSchedule schedule_from(const Config& cfg);
DatasetConfig dataset_config_from(const Config& cfg);
DenoiserConfig denoiser_config_from(const Config& cfg);
ClassifierConfig classifier_config_from(const Config& cfg);
TimestepSampler tsampler_from(const Config& cfg);
TrainOpts train_opts_from(const Config& cfg);

// Adapter sized for the given backbone's tap stack and condition domain.
AdapterConfig adapter_config_from(const Config& cfg, const DenoiserModel<float>& den,
                                  CondKind kind);

// Guidance presets per condition domain (strength, truncation fraction).
void domain_guidance_defaults(CondKind kind, double& beta, double& t_frac);

// GuidanceConfig from config keys; negative guidance.beta / t_trunc_frac pick
// the per-domain defaults, and the fraction becomes an absolute step index.
GuidanceConfig guidance_from(const Config& cfg, CondKind kind, int T);

// ---- guided sampling driver ----------------------------------------------------

// Metrics of one guided batch. fidelity is the mean squared distance between
// the condition re-extracted from each sample and the target (lower = closer
// fit). frechet/class_acc stay NaN until a classifier fills them.
struct MetricsReport {
  double fidelity = 0;
  double frechet = 0;
  double class_acc = 0;
  double wall_ms_per_sample = 0;
  int guided_steps = 0;
};

const std::vector<std::string>& metrics_columns();
std::vector<std::string> metrics_row(const MetricsReport& m);

struct GuidedRun {
  std::vector<Image> samples;  // [-1,1], one per chain
  std::vector<StepTrace> trace;
  ConditionMap target;
  int cls = 0;  // class every chain was conditioned on
  MetricsReport metrics;
};

// Sample `count` chains against the condition extracted from `item`, as one
// batch (each chain guided as if alone). cls < 0 conditions on item's label.
// A non-empty dump_dir receives step_{level}_{sample|cond} images of chain 0
// per the guidance dump_every setting.
GuidedRun run_guided(DenoiserModel<float>& den, ConditionAdapter<float>& adapter, CondKind kind,
                     const NoiseSchedule& sched, GuidanceConfig g, const DatasetItem& item,
                     int count, int cls = -1, const std::string& dump_dir = "");

// Fill metrics.class_acc (vs the conditioning class) and metrics.frechet (vs
// up to `ref_cap` validation images) on an existing run.
void score_with_classifier(GuidedRun& run, Classifier<float>& clf, const ProceduralDataset& data,
                           int ref_cap = 256);

// ---- ablation -----------------------------------------------------------------

struct AblationContext {
  Config cfg;  // effective run config (budgets, sample count, seeds)
  DenoiserModel<float>* denoiser = nullptr;
  ConditionAdapter<float>* adapter = nullptr;  // trained default adapter
  Classifier<float>* classifier = nullptr;     // optional
  const ProceduralDataset* data = nullptr;
  NoiseSchedule sched;
  CondKind kind = CondKind::edge;
};

// Built-in grid for an axis (beta, t_trunc, n, adapter_size).
std::vector<std::string> default_grid(const std::string& axis);

// One-axis sweep holding everything else fixed: per point, adjust guidance
// (beta, t_trunc) or retrain the adapter (n, adapter_size) on the configured
// budget, sample, and append one metrics row to ablation.csv in run_dir. A
// contact sheet of the per-point samples lands next to it unless the grid is
// empty (header-only CSV). Returns rows written.
int ablation_run(AblationContext& ctx, const std::string& axis, std::vector<std::string> grid,
                 const std::string& run_dir);

}  // namespace lcdg
