#include "fdn/tasks.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fdn {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::step: return "step";
    case TaskKind::sine: return "sine";
    case TaskKind::quadratic: return "quadratic";
  }
  return "unknown";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test_id: return "test_id";
    case Split::test_ood: return "test_ood";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "step") return TaskKind::step;
  if (name == "sine") return TaskKind::sine;
  if (name == "quadratic") return TaskKind::quadratic;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test_id") return Split::test_id;
  if (name == "test_ood") return Split::test_ood;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

TaskSpec TaskSpec::preset(TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  return s;
}

void TaskSpec::validate() const {
  if (!(l > 0.0 && l < L)) throw std::invalid_argument("TaskSpec: need 0 < l < L");
  if (n_train == 0 || n_test_id == 0 || n_test_ood < 2) {
    throw std::invalid_argument("TaskSpec: need n_train, n_test_id >= 1 and n_test_ood >= 2");
  }
}

double TaskSpec::target(double x) const {
  switch (kind) {
    case TaskKind::step: return x > 0.0 ? 1.0 : (x < 0.0 ? 0.0 : 0.5);
    case TaskKind::sine: return amplitude * std::sin(frequency * x);
    case TaskKind::quadratic: return curvature * x * x + offset;
  }
  return 0.0;
}

double target_fn(TaskKind kind, double x) { return TaskSpec::preset(kind).target(x); }

std::vector<double> Dataset::xs(Split s) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (split[i] == s) out.push_back(x[i]);
  return out;
}

std::vector<double> Dataset::ys(Split s) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (split[i] == s) out.push_back(y[i]);
  return out;
}

std::size_t Dataset::count(Split s) const {
  std::size_t n = 0;
  for (Split v : split) n += v == s;
  return n;
}

Dataset make_dataset(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  Dataset ds;
  auto push = [&](double x, Split s) {
    ds.x.push_back(x);
    ds.y.push_back(spec.target(x));
    ds.split.push_back(s);
  };
  for (std::size_t i = 0; i < spec.n_train; ++i) push(rng.uniform(-spec.l, spec.l), Split::train);
  // Closed even grid over the interpolation region.
  if (spec.n_test_id == 1) {
    push(0.0, Split::test_id);
  } else {
    for (std::size_t i = 0; i < spec.n_test_id; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(spec.n_test_id - 1);
      push(-spec.l + 2.0 * spec.l * t, Split::test_id);
    }
  }
  // Cell-centred grids on both extrapolation lobes, so no point touches +-l.
  const std::size_t left = spec.n_test_ood / 2;
  const std::size_t right = spec.n_test_ood - left;
  const double width = spec.L - spec.l;
  for (std::size_t i = 0; i < left; ++i) {
    const double t = (static_cast<double>(left - 1 - i) + 0.5) / static_cast<double>(left);
    push(-spec.l - width * t, Split::test_ood);
  }
  for (std::size_t i = 0; i < right; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(right);
    push(spec.l + width * t, Split::test_ood);
  }
  return ds;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "x,y,split\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.x[i] << ',' << ds.y[i] << ',' << to_string(ds.split[i]) << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "x,y,split") throw std::runtime_error(path.string() + ": unexpected header");
  Dataset ds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string xs, ys, sp;
    if (!std::getline(ss, xs, ',') || !std::getline(ss, ys, ',') || !std::getline(ss, sp)) {
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    }
    ds.x.push_back(std::stod(xs));
    ds.y.push_back(std::stod(ys));
    ds.split.push_back(parse_split(sp));
  }
  return ds;
}

}  // namespace fdn
