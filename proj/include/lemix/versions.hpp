#pragma once

#include <optional>
#include <vector>

namespace lemix {

enum class UpdateMode { kCoLocated, kSeparate };

/// Model update counters. Co-located nodes each fine-tune their own replica;
/// under Separate a single trainer is checkpointed to the inference nodes
/// every `sync_interval` updates.
class ModelVersionState {
 public:
  ModelVersionState(int num_nodes, UpdateMode mode, int sync_interval);

  UpdateMode mode() const { return mode_; }
  long version(int node) const { return versions_.at(static_cast<std::size_t>(node)); }
  long trainer_version() const { return trainer_; }

  /// A training backward finished on `node`. Under Separate, returns the
  /// checkpoint version to ship when this update completes a sync interval.
  std::optional<long> apply_model_update(int node);

  /// A checkpoint finished loading on the inference nodes.
  void apply_sync(long checkpoint, const std::vector<int>& inference_nodes);

 private:
  UpdateMode mode_;
  int sync_interval_;
  long trainer_ = 0;
  std::vector<long> versions_;
};

}  // namespace lemix
