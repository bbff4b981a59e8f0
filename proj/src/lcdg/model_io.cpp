#include "lcdg/model_io.hpp"

#include <cstdio>
#include <utility>
#include <vector>

#include "lcdg/error.hpp"

namespace lcdg {
namespace {

void require_kind(const Checkpoint& ck, const std::string& want) {
  if (ck.kind != want) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "checkpoint kind '" + ck.kind + "' where '" + want + "' expected");
  }
}

int meta_int(const Checkpoint& ck, const std::string& key) {
  auto v = ck.meta(key);
  if (!v) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "checkpoint missing metadata key '" + key + "'");
  }
  try {
    size_t used = 0;
    int parsed = std::stoi(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return parsed;
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "metadata key '" + key + "' is not an integer: '" + *v + "'");
  }
}

std::string meta_str(const Checkpoint& ck, const std::string& key) {
  auto v = ck.meta(key);
  if (!v) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "checkpoint missing metadata key '" + key + "'");
  }
  return *v;
}

std::string hash_string(uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_arch(const Checkpoint& ck, uint64_t rebuilt_hash) {
  std::string stored = meta_str(ck, "arch_hash");
  std::string now = hash_string(rebuilt_hash);
  if (stored != now) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "architecture hash mismatch: checkpoint " + stored +
                              " vs rebuilt model " + now);
  }
}

void save_params(Checkpoint& ck, std::vector<std::pair<std::string, Tensor<float>>> params) {
  for (auto& [name, t] : params) ck.add_tensor(name, t);
}

void load_params(Checkpoint& ck, std::vector<std::pair<std::string, Tensor<float>>> params) {
  for (auto& [name, t] : params) {
    Tensor<float> stored = ck.get_tensor<float>(name);
    if (stored.shape() != t.shape()) {
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "tensor '" + name + "' has unexpected shape in checkpoint");
    }
    t.values() = stored.values();
  }
}

}  // namespace

std::string tap_spec_string(const TapSpec& taps) {
  std::string out;
  for (const TapInfo& tap : taps) {
    if (!out.empty()) out += ';';
    out += tap.name + ":" + std::to_string(tap.channels) + "x" + std::to_string(tap.height) +
           "x" + std::to_string(tap.width);
  }
  return out;
}

Checkpoint checkpoint_from_denoiser(DenoiserModel<float>& model) {
  const DenoiserConfig& cfg = model.config();
  Checkpoint ck;
  ck.kind = kDenoiserKind;
  ck.set_meta("in_channels", std::to_string(cfg.in_channels));
  ck.set_meta("image_size", std::to_string(cfg.image_size));
  ck.set_meta("base_channels", std::to_string(cfg.base_channels));
  ck.set_meta("num_classes", std::to_string(cfg.num_classes));
  ck.set_meta("pe_dim", std::to_string(cfg.pe_dim));
  ck.set_meta("emb_dim", std::to_string(cfg.emb_dim));
  ck.set_meta("arch_hash", hash_string(model.arch_hash()));
  ck.set_meta("tap_spec", tap_spec_string(model.tap_spec()));
  save_params(ck, model.named_params());
  return ck;
}

DenoiserModel<float> denoiser_from_checkpoint(Checkpoint& ck) {
  require_kind(ck, kDenoiserKind);
  DenoiserConfig cfg;
  cfg.in_channels = meta_int(ck, "in_channels");
  cfg.image_size = meta_int(ck, "image_size");
  cfg.base_channels = meta_int(ck, "base_channels");
  cfg.num_classes = meta_int(ck, "num_classes");
  cfg.pe_dim = meta_int(ck, "pe_dim");
  cfg.emb_dim = meta_int(ck, "emb_dim");
  DenoiserModel<float> model(cfg, 0);
  check_arch(ck, model.arch_hash());
  if (meta_str(ck, "tap_spec") != tap_spec_string(model.tap_spec())) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "tap layout in checkpoint does not match rebuilt model");
  }
  load_params(ck, model.named_params());
  return model;
}

Checkpoint checkpoint_from_adapter(ConditionAdapter<float>& adapter,
                                   const std::string& cond_domain) {
  const AdapterConfig& cfg = adapter.config();
  Checkpoint ck;
  ck.kind = kAdapterKind;
  ck.set_meta("cond_domain", cond_domain);
  ck.set_meta("in_channels", std::to_string(cfg.in_channels));
  ck.set_meta("cond_channels", std::to_string(cfg.cond_channels));
  ck.set_meta("height", std::to_string(cfg.height));
  ck.set_meta("width", std::to_string(cfg.width));
  ck.set_meta("size_class", cfg.size_class);
  ck.set_meta("pe_dim", std::to_string(cfg.pe_dim));
  ck.set_meta("emb_dim", std::to_string(cfg.emb_dim));
  ck.set_meta("arch_hash", hash_string(adapter.arch_hash()));
  save_params(ck, adapter.named_params());
  for (const auto& [name, data] : adapter.named_buffers()) {
    ck.add_values("buffer." + name, {static_cast<int>(data.size())}, data);
  }
  return ck;
}

ConditionAdapter<float> adapter_from_checkpoint(Checkpoint& ck) {
  require_kind(ck, kAdapterKind);
  AdapterConfig cfg;
  cfg.in_channels = meta_int(ck, "in_channels");
  cfg.cond_channels = meta_int(ck, "cond_channels");
  cfg.height = meta_int(ck, "height");
  cfg.width = meta_int(ck, "width");
  cfg.size_class = meta_str(ck, "size_class");
  cfg.pe_dim = meta_int(ck, "pe_dim");
  cfg.emb_dim = meta_int(ck, "emb_dim");
  ConditionAdapter<float> adapter(cfg, 0);
  check_arch(ck, adapter.arch_hash());
  load_params(ck, adapter.named_params());
  for (const auto& [name, data] : adapter.named_buffers()) {
    std::vector<float> stored = ck.get_values<float>("buffer." + name);
    if (stored.size() != data.size()) {
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "buffer '" + name + "' has unexpected size in checkpoint");
    }
    adapter.load_buffer(name, stored);
  }
  return adapter;
}

std::string adapter_domain(const Checkpoint& ck) {
  require_kind(ck, kAdapterKind);
  return meta_str(ck, "cond_domain");
}

Checkpoint checkpoint_from_classifier(Classifier<float>& clf) {
  const ClassifierConfig& cfg = clf.config();
  Checkpoint ck;
  ck.kind = kClassifierKind;
  ck.set_meta("in_channels", std::to_string(cfg.in_channels));
  ck.set_meta("image_size", std::to_string(cfg.image_size));
  ck.set_meta("num_classes", std::to_string(cfg.num_classes));
  ck.set_meta("feat_dim", std::to_string(cfg.feat_dim));
  ck.set_meta("arch_hash", hash_string(clf.arch_hash()));
  save_params(ck, clf.named_params());
  return ck;
}

Classifier<float> classifier_from_checkpoint(Checkpoint& ck) {
  require_kind(ck, kClassifierKind);
  ClassifierConfig cfg;
  cfg.in_channels = meta_int(ck, "in_channels");
  cfg.image_size = meta_int(ck, "image_size");
  cfg.num_classes = meta_int(ck, "num_classes");
  cfg.feat_dim = meta_int(ck, "feat_dim");
  Classifier<float> clf(cfg, 0);
  check_arch(ck, clf.arch_hash());
  load_params(ck, clf.named_params());
  return clf;
}

}  // namespace lcdg
