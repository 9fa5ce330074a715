#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "interp/model/transformer.hpp"

namespace interp::model {

/// Directory searched for checkpoints: $INTERP_MODEL_DIR, else
/// ~/.cache/interp-workbench/models. Each id lives in `<root>/<id>/`.
std::filesystem::path model_root();

/// Shipped assets (tokenizers, prompt templates, task data): $INTERP_ASSET_DIR
/// or the source tree's assets/ directory.
std::filesystem::path asset_dir();

/// Ids known to the loader. "toy-gpt2-small" is synthetic and always
/// available; the rest need weights under model_root().
std::vector<std::string> registered_models();

bool checkpoint_available(const std::string& id);

/// Loads (or returns the already-loaded) checkpoint for `id`. An id that is
/// an existing directory is loaded directly.
std::shared_ptr<const Checkpoint> load_checkpoint(const std::string& id);

/// Architecture of the synthetic toy model: GPT-2 small's 12x12 head grid
/// with d_head 4 and the real GPT-2 tokenizer.
ModelConfig toy_gpt2_config();

}  // namespace interp::model
