#include "lemix/task.hpp"

namespace lemix {

const char* to_string(TaskKind kind) {
  return kind == TaskKind::kTraining ? "training" : "inference";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "inference") return TaskKind::kInference;
  if (s == "training") return TaskKind::kTraining;
  throw ConfigError("unknown task kind '" + s + "'");
}

void validate(const Task& task) {
  if (task.arrival < 0.0) throw ConfigError("task.arrival must be >= 0");
  if (task.length < 1) throw ConfigError("task.length must be >= 1");
  if (task.batch_size < 1) throw ConfigError("task.batch_size must be >= 1");
  if (task.output_length < 0) throw ConfigError("task.output_length must be >= 0");
  if (task.kind == TaskKind::kTraining && task.output_length != 0)
    throw ConfigError("task.output_length must be 0 for training tasks");
}

}  // namespace lemix
