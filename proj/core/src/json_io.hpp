#pragma once

// nlohmann converters for the spec types. Private to the library.

#include "json.hpp"

#include "fdn/config.hpp"
#include "fdn/models.hpp"
#include "fdn/tasks.hpp"

namespace fdn::detail {

using nlohmann::json;

json to_json(const ModelSpec& s);
// Preset for the named kind, then field overrides. Unknown keys throw.
ModelSpec model_spec_from_json(const json& j);

json to_json(const TaskSpec& s);
TaskSpec task_spec_from_json(const json& j);

json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const json& j);

// Throws std::invalid_argument naming the first key of `j` not in `allowed`.
void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace fdn::detail
