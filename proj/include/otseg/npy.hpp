#pragma once

// Minimal NPY v1.0 reader/writer for the two dtypes task exports use.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace otseg::npy {

enum class DType { Float32, UInt16 };

struct Header {
  DType dtype = DType::Float32;
  bool big_endian = false;
  std::vector<std::uint64_t> shape;
  std::size_t data_offset = 0;
};

/// Parses the magic, version and header dict. Throws Format errors.
Header parse_header(const std::string& bytes);

std::vector<float> load_float32(const std::filesystem::path& path,
                                std::vector<std::uint64_t>& shape);
std::vector<std::uint16_t> load_uint16(const std::filesystem::path& path,
                                       std::vector<std::uint64_t>& shape);

void save_float32(const std::filesystem::path& path, const std::vector<float>& data,
                  const std::vector<std::uint64_t>& shape);
void save_uint16(const std::filesystem::path& path, const std::vector<std::uint16_t>& data,
                 const std::vector<std::uint64_t>& shape);

}  // namespace otseg::npy
