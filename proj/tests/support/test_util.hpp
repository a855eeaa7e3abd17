#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "hoverpost/tensor.hpp"

namespace hoverpost::test {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("hoverpost_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Instance map from rows of labels.
inline InstanceMap make_map(const std::vector<std::vector<std::uint32_t>>& rows) {
  InstanceMap m(static_cast<int>(rows.size()), static_cast<int>(rows.at(0).size()), 1, 0u);
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

/// NPY v1.0 file holding a 1-D '<U<width>' string array.
inline void write_unicode_npy(const std::filesystem::path& p, const std::vector<std::string>& values,
                              std::size_t width) {
  std::string header = "{'descr': '<U" + std::to_string(width) + "', 'fortran_order': False, 'shape': (" +
                       std::to_string(values.size()) + ",), }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::string bytes = "\x93NUMPY";
  bytes += '\x01';
  bytes += '\x00';
  bytes += static_cast<char>(header.size() & 0xff);
  bytes += static_cast<char>(header.size() >> 8);
  bytes += header;
  for (const auto& s : values) {
    for (std::size_t i = 0; i < width; ++i) {
      const char c = i < s.size() ? s[i] : '\0';
      bytes += c;
      bytes.append(3, '\0');
    }
  }
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

inline void fill_rect(InstanceMap& m, int r0, int c0, int h, int w, std::uint32_t label) {
  for (int r = r0; r < r0 + h; ++r) {
    for (int c = c0; c < c0 + w; ++c) m(r, c) = label;
  }
}

}  // namespace hoverpost::test
