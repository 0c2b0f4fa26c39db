#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace rewardevo {

using Json = nlohmann::json;

// Pretty JSON with a trailing newline. Object keys are sorted, so output is
// stable for identical content.
inline std::string dump_json(const Json& value) { return value.dump(2) + "\n"; }

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void append_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace rewardevo
