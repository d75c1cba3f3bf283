#include "otseg/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "otseg/error.hpp"

namespace otseg::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

// Returns the text following `'key':` in the header dict, trimmed.
std::string dict_value(const std::string& dict, const std::string& key) {
  const auto at = dict.find("'" + key + "'");
  if (at == std::string::npos) fail(ErrorKind::Format, "npy header lacks '" + key + "'");
  auto pos = dict.find(':', at);
  if (pos == std::string::npos) fail(ErrorKind::Format, "npy header malformed near " + key);
  ++pos;
  while (pos < dict.size() && dict[pos] == ' ') ++pos;
  if (pos >= dict.size()) fail(ErrorKind::Format, "npy header truncated");
  std::size_t end = pos;
  if (dict[pos] == '(') {
    end = dict.find(')', pos);
    if (end == std::string::npos) fail(ErrorKind::Format, "npy shape tuple unterminated");
    return dict.substr(pos, end - pos + 1);
  }
  if (dict[pos] == '\'') {
    end = dict.find('\'', pos + 1);
    if (end == std::string::npos) fail(ErrorKind::Format, "npy descr unterminated");
    return dict.substr(pos + 1, end - pos - 1);
  }
  end = dict.find_first_of(",}", pos);
  if (end == std::string::npos) fail(ErrorKind::Format, "npy header malformed near " + key);
  return dict.substr(pos, end - pos);
}

std::vector<std::uint64_t> parse_shape(const std::string& tuple) {
  std::vector<std::uint64_t> shape;
  std::string body = tuple.substr(1, tuple.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    const auto last = item.find_last_not_of(' ');
    item = item.substr(first, last - first + 1);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      fail(ErrorKind::Format, "npy shape entry '" + item + "' is not an integer");
    }
    if (used != item.size()) fail(ErrorKind::Format, "npy shape entry '" + item + "' malformed");
    shape.push_back(v);
  }
  return shape;
}

template <typename T>
std::vector<T> load_typed(const std::filesystem::path& path, DType want,
                          std::vector<std::uint64_t>& shape) {
  const std::string bytes = read_file(path);
  const Header h = parse_header(bytes);
  if (h.dtype != want) fail(ErrorKind::Format, path.string() + ": unexpected dtype");
  std::uint64_t count = 1;
  for (auto d : h.shape) count *= d;
  if (bytes.size() - h.data_offset != count * sizeof(T)) {
    fail(ErrorKind::Format, path.string() + ": data size does not match shape");
  }
  std::vector<T> out(count);
  std::memcpy(out.data(), bytes.data() + h.data_offset, count * sizeof(T));
  const bool native_little = std::endian::native == std::endian::little;
  if (h.big_endian == native_little) {
    for (auto& v : out) {
      if constexpr (sizeof(T) == 4) {
        std::uint32_t raw;
        std::memcpy(&raw, &v, 4);
        raw = __builtin_bswap32(raw);
        std::memcpy(&v, &raw, 4);
      } else {
        v = static_cast<T>(__builtin_bswap16(v));
      }
    }
  }
  shape = h.shape;
  return out;
}

template <typename T>
void save_typed(const std::filesystem::path& path, const char* descr, const std::vector<T>& data,
                const std::vector<std::uint64_t>& shape) {
  static_assert(std::endian::native == std::endian::little, "writer assumes little-endian host");
  std::string dict = std::string("{'descr': '") + descr + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // Pad so that magic + version + len + dict + '\n' is a multiple of 64.
  const std::size_t preamble = kMagicLen + 2 + 2;
  std::size_t total = preamble + dict.size() + 1;
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(dict.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

Header parse_header(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    fail(ErrorKind::Format, "not an npy file (bad magic)");
  }
  const auto major = static_cast<unsigned char>(bytes[kMagicLen]);
  std::size_t header_len = 0;
  std::size_t dict_start = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    dict_start = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) fail(ErrorKind::Format, "npy header truncated");
    for (int i = 0; i < 4; ++i) {
      header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    dict_start = 12;
  } else {
    fail(ErrorKind::Format, "unsupported npy version " + std::to_string(major));
  }
  if (bytes.size() < dict_start + header_len) fail(ErrorKind::Format, "npy header truncated");
  const std::string dict = bytes.substr(dict_start, header_len);

  Header h;
  const std::string descr = dict_value(dict, "descr");
  if (descr.size() != 3) fail(ErrorKind::Format, "unsupported npy dtype '" + descr + "'");
  const char order = descr[0];
  const std::string kind = descr.substr(1);
  if (kind == "f4") {
    h.dtype = DType::Float32;
  } else if (kind == "u2") {
    h.dtype = DType::UInt16;
  } else {
    fail(ErrorKind::Format, "unsupported npy dtype '" + descr + "'");
  }
  if (order == '>') {
    h.big_endian = true;
  } else if (order != '<' && order != '=' && order != '|') {
    fail(ErrorKind::Format, "unsupported npy byte order in '" + descr + "'");
  } else {
    h.big_endian = order == '=' && std::endian::native == std::endian::big;
  }
  if (dict_value(dict, "fortran_order") != "False") {
    fail(ErrorKind::Format, "fortran-ordered npy arrays are not supported");
  }
  h.shape = parse_shape(dict_value(dict, "shape"));
  h.data_offset = dict_start + header_len;
  return h;
}

std::vector<float> load_float32(const std::filesystem::path& path,
                                std::vector<std::uint64_t>& shape) {
  return load_typed<float>(path, DType::Float32, shape);
}

std::vector<std::uint16_t> load_uint16(const std::filesystem::path& path,
                                       std::vector<std::uint64_t>& shape) {
  return load_typed<std::uint16_t>(path, DType::UInt16, shape);
}

void save_float32(const std::filesystem::path& path, const std::vector<float>& data,
                  const std::vector<std::uint64_t>& shape) {
  save_typed(path, "<f4", data, shape);
}

void save_uint16(const std::filesystem::path& path, const std::vector<std::uint16_t>& data,
                 const std::vector<std::uint64_t>& shape) {
  save_typed(path, "<u2", data, shape);
}

}  // namespace otseg::npy
