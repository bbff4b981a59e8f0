#include "lcdg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lcdg/error.hpp"

namespace lcdg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) throw ConfigError("config: invalid key '" + key + "'");
  kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end() || it->second.empty())
    throw ConfigError("config: required key '" + key + "' is not set");
  return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(it->second, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + it->second + "'");
  }
  if (used != it->second.size())
    throw ConfigError("config: key '" + key + "' has non-integer value '" + it->second + "'");
  return v;
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  size_t used = 0;
  uint64_t v = 0;
  try {
    v = std::stoull(it->second, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + it->second + "'");
  }
  if (used != it->second.size() || it->second[0] == '-')
    throw ConfigError("config: key '" + key + "' has non-integer value '" + it->second + "'");
  return v;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(it->second, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + it->second + "'");
  }
  if (used != it->second.size())
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + it->second + "'");
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' has non-boolean value '" + v +
                    "' (use true/false/1/0)");
}

std::string Config::to_string() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

Config Config::from_string(const std::string& text, const std::string& source) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + source + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key))
      throw ConfigError("config: " + source + ":" + std::to_string(lineno) + ": invalid key '" +
                        key + "'");
    if (value.empty())
      throw ConfigError("config: " + source + ":" + std::to_string(lineno) + ": key '" + key +
                        "' has no value");
    if (cfg.kv_.count(key))
      throw ConfigError("config: " + source + ":" + std::to_string(lineno) + ": duplicate key '" +
                        key + "'");
    cfg.kv_[key] = value;
  }
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str(), path);
}

void Config::merge_from(const Config& overrides) {
  for (const auto& [k, v] : overrides.kv_) kv_[k] = v;
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"ablate.axis", "beta", "sweep axis: beta | t_trunc | n | adapter_size"},
      {"ablate.grid", "", "comma-separated grid values; empty = built-in grid for the axis"},
      {"ablate.samples", "64", "chains sampled per grid point"},
      {"adapter.cond", "edge", "condition domain: edge | stroke | palette | mask"},
      {"adapter.size_class", "default", "feature-branch width preset: default | tiny"},
      {"alpha.fixed", "-1", "use this constant guidance scale when >= 0"},
      {"alpha.norm_ratio", "false", "plain-norm ratio scale instead of the squared-norm ratio"},
      {"ckpt.adapter", "", "condition adapter checkpoint path"},
      {"ckpt.classifier", "", "shape classifier checkpoint path (enables feature metrics)"},
      {"ckpt.denoiser", "", "denoiser checkpoint path"},
      {"data.channels", "1", "image channels: 1 grayscale, 3 color"},
      {"data.image_size", "32", "square image side"},
      {"data.n", "512", "dataset size before the train/val split"},
      {"data.seed", "0", "dataset generation seed"},
      {"data.val_frac", "0.25", "fraction of items held out for validation"},
      {"gradcheck.seeds", "20", "random seeds per op"},
      {"gradcheck.tol", "1e-4", "max allowed relative gradient error"},
      {"guidance.beta", "-1", "guidance strength; < 0 = per-domain default"},
      {"guidance.ddim_eta", "0", "deterministic-sampler noise level (0 = none)"},
      {"guidance.ddim_steps", "50", "kept steps for the strided sampler; must divide schedule.T"},
      {"guidance.dump_every", "0", "dump sample/condition images every k-th step (0 = off)"},
      {"guidance.omega", "6", "classifier-free mixing weight"},
      {"guidance.sampler", "ddpm", "reverse sampler: ddpm | ddim"},
      {"guidance.ssc", "false", "guide every other eligible step"},
      {"guidance.t_trunc_frac", "-1",
       "guide only the first (1 - frac) of the chain; < 0 = per-domain default"},
      {"model.base_channels", "32", "denoiser width"},
      {"model.emb_dim", "128", "conditioning embedding width"},
      {"model.pe_dim", "64", "timestep encoding width"},
      {"oracle.chains", "2000", "Monte-Carlo chains for the closed-form comparison"},
      {"oracle.tol_se", "3", "allowed deviation in standard errors"},
      {"out.root", "runs", "output root directory (env LCDG_RUN_DIR overrides)"},
      {"resample.mode", "resampled", "adapter-training timestep draw: uniform | resampled"},
      {"resample.n", "2", "late-bias exponent of the timestep resampler"},
      {"run.label", "", "optional suffix for the run directory name"},
      {"sample.cls", "-1", "class to condition on; -1 = class of the condition item"},
      {"sample.cond_index", "0", "validation item supplying the external condition"},
      {"sample.count", "16", "chains to sample"},
      {"sample.seed", "0", "sampling seed"},
      {"schedule.T", "1000", "diffusion steps"},
      {"schedule.beta_end", "0.02", "last forward-process variance"},
      {"schedule.beta_start", "0.0001", "first forward-process variance"},
      {"train.batch_size", "16", "examples per optimizer step"},
      {"train.checkpoint_every", "0", "periodic checkpoint interval in steps (0 = final only)"},
      {"train.divergence_factor", "10", "abort when loss exceeds this multiple of the first loss"},
      {"train.log_every", "50", "loss-curve sampling interval in steps"},
      {"train.lr", "0.0001", "Adam learning rate"},
      {"train.p_uncond", "0.1", "label-drop probability during denoiser training"},
      {"train.resume", "", "trainer checkpoint to continue from"},
      {"train.seed", "0", "training seed"},
      {"train.steps", "1000", "optimizer steps to run"},
  };
  return schema;
}

Config default_config() {
  Config cfg;
  for (const ConfigKey& k : config_schema())
    if (!k.preset.empty()) cfg.set(k.name, k.preset);
  return cfg;
}

void require_known_keys(const Config& cfg) {
  const auto& schema = config_schema();
  for (const auto& [k, v] : cfg.entries()) {
    bool known = std::any_of(schema.begin(), schema.end(),
                             [&](const ConfigKey& s) { return s.name == k; });
    if (!known) throw ConfigError("config: unknown key '" + k + "'");
  }
}

}  // namespace lcdg
