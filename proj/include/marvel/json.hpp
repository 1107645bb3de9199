#pragma once

// Single include point for nlohmann/json; the vendored copy is on the include path.
#include <json.hpp>

namespace marvel {
using Json = nlohmann::json;
}
