#pragma once

#include <string>

#include "dmgp/model.hpp"

namespace dmgp {

inline constexpr int kModelSchemaVersion = 1;

// JSON checkpoint of every layer parameter in constrained form.  Doubles
// are serialized shortest-round-trip, so save -> load -> predict is
// bit-identical.
void save_model(const DmgpModel& model, const std::string& path);
DmgpModel load_model(const std::string& path);

}  // namespace dmgp
