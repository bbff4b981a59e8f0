#pragma once

#include <string>

#include "lcdg/adapter.hpp"
#include "lcdg/checkpoint.hpp"
#include "lcdg/metrics.hpp"
#include "lcdg/unet.hpp"

namespace lcdg {

// Checkpoint `kind` strings for each model family.
inline constexpr const char* kDenoiserKind = "denoiser";
inline constexpr const char* kAdapterKind = "adapter";
inline constexpr const char* kClassifierKind = "classifier";

// Serialize a denoiser: config and tap layout in metadata, parameters as
// named tensors. Loading rebuilds the model from metadata and fills weights;
// a kind/architecture mismatch raises CheckpointError(malformed), a missing
// weight raises CheckpointError(missing_tensor).
Checkpoint checkpoint_from_denoiser(DenoiserModel<float>& model);
DenoiserModel<float> denoiser_from_checkpoint(Checkpoint& ck);

// Serialize an adapter together with the condition domain it was trained
// for ("edge", "stroke", "palette", "mask") and its batch-norm buffers.
Checkpoint checkpoint_from_adapter(ConditionAdapter<float>& adapter,
                                   const std::string& cond_domain);
ConditionAdapter<float> adapter_from_checkpoint(Checkpoint& ck);
// The stored condition domain; malformed if absent.
std::string adapter_domain(const Checkpoint& ck);

Checkpoint checkpoint_from_classifier(Classifier<float>& clf);
Classifier<float> classifier_from_checkpoint(Checkpoint& ck);

// Human-readable tap layout used in denoiser metadata ("name:CxHxW;...").
std::string tap_spec_string(const TapSpec& taps);

}  // namespace lcdg
