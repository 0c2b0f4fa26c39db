#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

#include "rewardevo/core/data.hpp"
#include "rewardevo/core/digest.hpp"
#include "rewardevo/core/json.hpp"
#include "rewardevo/core/rng.hpp"

namespace rewardevo {

std::string Rng::state() const
{
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::restore(const std::string& state)
{
  std::istringstream in(state);
  in >> engine_;
  if (!in) {
    throw std::invalid_argument("malformed generator state");
  }
}

std::string sha256_hex(std::string_view bytes)
{
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

Json read_json_file(const std::filesystem::path& path)
{
  return Json::parse(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void append_text_file(const std::filesystem::path& path, std::string_view text)
{
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) {
    throw std::runtime_error("cannot append to " + path.string());
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

namespace data {

std::string_view get(std::string_view path)
{
  if (auto found = find(path)) {
    return *found;
  }
  throw std::out_of_range("missing bundled fixture: " + std::string(path));
}

std::vector<std::string_view> list(std::string_view prefix)
{
  std::vector<std::string_view> out;
  for (const auto& [name, body] : catalog()) {
    if (name.starts_with(prefix)) {
      out.push_back(name);
    }
  }
  return out;
}

}  // namespace data
}  // namespace rewardevo
