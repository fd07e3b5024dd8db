#include "lemix/versions.hpp"

#include <algorithm>

#include "lemix/task.hpp"

namespace lemix {

ModelVersionState::ModelVersionState(int num_nodes, UpdateMode mode, int sync_interval)
    : mode_(mode), sync_interval_(sync_interval), versions_(static_cast<std::size_t>(num_nodes), 0) {
  if (num_nodes < 1) throw ConfigError("versions: need at least one node");
  if (sync_interval < 1) throw ConfigError("cluster.sync_interval must be >= 1");
}

std::optional<long> ModelVersionState::apply_model_update(int node) {
  if (mode_ == UpdateMode::kCoLocated) {
    ++versions_.at(static_cast<std::size_t>(node));
    return std::nullopt;
  }
  ++trainer_;
  if (trainer_ % sync_interval_ == 0) return trainer_;
  return std::nullopt;
}

void ModelVersionState::apply_sync(long checkpoint, const std::vector<int>& inference_nodes) {
  for (int n : inference_nodes) {
    long& v = versions_.at(static_cast<std::size_t>(n));
    v = std::max(v, checkpoint);
  }
}

}  // namespace lemix
