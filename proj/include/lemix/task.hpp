#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lemix {

using TaskId = std::int64_t;
using Seconds = double;
using Bytes = double;

enum class TaskKind { kInference, kTraining };
enum class Pass { kForward, kBackward };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// Raised for invalid user-facing configuration; the message names the field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// A caller broke an operation's precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct StageSpan {
  Seconds start = 0.0;
  Seconds end = 0.0;
  bool operator==(const StageSpan&) const = default;
};

/// Per-stage forward spans (stage 0..S-1) and, for training work, backward
/// spans indexed by stage as well. Backward runs S-1 down to 0.
struct ExecPath {
  std::vector<StageSpan> forward;
  std::vector<StageSpan> backward;

  bool has_backward() const { return !backward.empty(); }
  std::size_t stages() const { return forward.size(); }
  Seconds forward_end() const { return forward.empty() ? 0.0 : forward.back().end; }
  bool operator==(const ExecPath&) const = default;
};

struct Task {
  TaskId id = 0;
  TaskKind kind = TaskKind::kInference;
  Seconds arrival = 0.0;
  int length = 1;
  int batch_size = 1;
  int output_length = 0;
  Seconds slo_deadline = 0.0;
  std::optional<ExecPath> planned_path;
  std::optional<ExecPath> actual_path;

  bool requires_backward() const { return kind == TaskKind::kTraining; }
};

/// Checks the Task field invariants; throws ConfigError naming the field.
void validate(const Task& task);

}  // namespace lemix
