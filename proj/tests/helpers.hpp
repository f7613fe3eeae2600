#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace sqi_test {

/// Self-cleaning unique directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::mt19937_64 rng{std::random_device{}()};
    path = std::filesystem::temp_directory_path() /
           ("sqi-test-" + std::to_string(rng()) + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(std::string_view name) const { return path / name; }
};

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline std::string tiny_png() {
  return std::string("\x89PNG\r\n\x1a\n") + "fixture-bytes";
}

inline std::string tiny_jpeg() {
  return std::string("\xFF\xD8\xFF\xE0") + "fixture-bytes";
}

inline std::filesystem::path fixtures_dir() {
  return std::filesystem::path(SQI_SOURCE_DIR) / "fixtures";
}

}  // namespace sqi_test
