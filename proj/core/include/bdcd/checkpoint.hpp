#pragma once

#include <string>

#include "bdcd/model.hpp"

namespace bdcd {

/// Self-describing weight container: format version, full ModelConfig, and
/// the named parameter tensors. save -> load -> save is byte-identical.
struct Checkpoint {
    int format_version = 1;
    ModelConfig model;
    std::string extra_json;  // optional serialized loss/train settings
    std::vector<std::pair<std::string, Tensor>> weights;
};

Checkpoint checkpoint_from_model(const ChangeNet& net, const std::string& extra_json = "");
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Loads every checkpoint weight into the model; names and shapes must match
/// the model's parameter set exactly.
void load_weights_into(ChangeNet& net, const Checkpoint& ckpt);

/// Construct the checkpointed architecture and install its weights.
ChangeNet model_from_checkpoint(const Checkpoint& ckpt);

/// Copy weights whose names start with `prefix` and whose shapes match;
/// returns the number of parameters transferred (used for encoder transfer).
int transfer_matching_params(ChangeNet& net,
                             const std::vector<std::pair<std::string, Tensor>>& weights,
                             const std::string& prefix);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& j);

}  // namespace bdcd
