#pragma once

// Configuration documents: JSON, or a flat TOML subset.
//
// The TOML reader understands `key = value` pairs, `[table]` and
// `[table.sub]` headers, dotted keys, basic and literal strings, integers,
// floats, booleans, single-line arrays of scalars, and `#` comments.
// Anything else is rejected with config_error and a line number.

#include <json.hpp>

#include <filesystem>
#include <string_view>

namespace nowait {

nlohmann::json parse_flat_toml(std::string_view text);

// Dispatches on extension: `.toml` is read as TOML, everything else as JSON.
nlohmann::json load_config_document(const std::filesystem::path & path);

} // namespace nowait
