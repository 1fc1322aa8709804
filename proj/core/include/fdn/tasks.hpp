#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fdn/rng.hpp"

namespace fdn {

enum class TaskKind { step, sine, quadratic };
enum class Split { train, test_id, test_ood };

std::string to_string(TaskKind kind);
std::string to_string(Split split);
TaskKind parse_task_kind(std::string_view name);
Split parse_split(std::string_view name);

// Synthetic 1D regression task. Training inputs come from the interpolation
// region [-l, l]; OOD test inputs from (-L, -l) U (l, L).
struct TaskSpec {
  TaskKind kind = TaskKind::sine;
  // step: unused; sine: amplitude * sin(frequency * x);
  // quadratic: curvature * x^2 + offset.
  double amplitude = 1.54;
  double frequency = 2.39;
  double curvature = 0.43;
  double offset = -0.41;
  double l = 2.0;
  double L = 4.0;
  std::size_t n_train = 256;
  std::size_t n_test_id = 200;
  std::size_t n_test_ood = 200;

  static TaskSpec preset(TaskKind kind);
  void validate() const;
  double target(double x) const;
};

// Heaviside step (1/2 at 0), 1.54 sin(2.39 x) or 0.43 x^2 - 0.41.
double target_fn(TaskKind kind, double x);

struct Dataset {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<Split> split;

  std::size_t size() const { return x.size(); }
  // Inputs/targets of one split in stored order.
  std::vector<double> xs(Split s) const;
  std::vector<double> ys(Split s) const;
  std::size_t count(Split s) const;
};

Dataset make_dataset(const TaskSpec& spec, Rng& rng);

// CSV with header x,y,split and 17 significant digits.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace fdn
