#pragma once

#include <map>
#include <optional>
#include <string_view>
#include <vector>

// Bundled fixtures (metadata, prompt templates, reward programs) compiled into
// the library from the data/ directory.
namespace rewardevo::data {

const std::map<std::string_view, std::string_view>& catalog();

inline std::optional<std::string_view> find(std::string_view path)
{
  const auto& files = catalog();
  if (auto it = files.find(path); it != files.end()) {
    return it->second;
  }
  return std::nullopt;
}

// Throws std::out_of_range when the fixture is not bundled.
std::string_view get(std::string_view path);

std::vector<std::string_view> list(std::string_view prefix);

}  // namespace rewardevo::data
