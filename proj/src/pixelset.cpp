#include "otseg/pixelset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "otseg/error.hpp"
#include "otseg/npy.hpp"

namespace otseg {
namespace {

namespace fs = std::filesystem;

constexpr char kContainerMagic[8] = {'O', 'T', 'S', 'E', 'G', 'V', '1', '\0'};
constexpr std::size_t kHeaderBytes = 32;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.append(raw, sizeof(T));
}

template <typename T>
T get_le(const char* in) {
  char raw[sizeof(T)];
  std::memcpy(raw, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

template <typename T>
void append_array_le(std::string& out, const std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(T));
  } else {
    for (const T& v : values) put_le(out, v);
  }
}

template <typename T>
std::vector<T> read_array_le(const char* in, std::size_t count) {
  std::vector<T> out(count);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), in, count * sizeof(T));
  } else {
    for (std::size_t i = 0; i < count; ++i) out[i] = get_le<T>(in + i * sizeof(T));
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

TaskExport load_container(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    fail(ErrorKind::Format, path.string() + ": not a task-export container (bad magic)");
  }
  TaskExport task;
  const char* p = bytes.data() + 8;
  task.n = get_le<std::uint32_t>(p);
  task.height = get_le<std::uint32_t>(p + 4);
  task.width = get_le<std::uint32_t>(p + 8);
  task.channels = get_le<std::uint32_t>(p + 12);
  task.class_count = get_le<std::uint32_t>(p + 16);
  const auto ignore_count = get_le<std::uint32_t>(p + 20);

  const std::uint64_t pixels = std::uint64_t{task.n} * task.height * task.width;
  const std::uint64_t expected = kHeaderBytes + 2ull * ignore_count +
                                 pixels * task.channels * sizeof(float) +
                                 pixels * sizeof(ClassId);
  if (bytes.size() != expected) {
    fail(ErrorKind::Format, path.string() + ": container is " + std::to_string(bytes.size()) +
                                " bytes, header implies " + std::to_string(expected));
  }
  std::size_t offset = kHeaderBytes;
  for (std::uint32_t i = 0; i < ignore_count; ++i, offset += 2) {
    task.ignore_labels.insert(get_le<ClassId>(bytes.data() + offset));
  }
  task.features = read_array_le<float>(bytes.data() + offset, pixels * task.channels);
  offset += pixels * task.channels * sizeof(float);
  task.labels = read_array_le<ClassId>(bytes.data() + offset, pixels);
  validate(task);
  return task;
}

TaskExport load_directory(const fs::path& dir) {
  std::vector<std::uint64_t> fshape;
  std::vector<std::uint64_t> lshape;
  TaskExport task;
  task.features = npy::load_float32(dir / "features.npy", fshape);
  task.labels = npy::load_uint16(dir / "labels.npy", lshape);
  if (fshape.size() != 4) fail(ErrorKind::Validation, "features.npy must be 4-D [n,H,W,C]");
  if (lshape.size() != 3) fail(ErrorKind::Validation, "labels.npy must be 3-D [n,H,W]");
  for (int i = 0; i < 3; ++i) {
    if (fshape[i] != lshape[i]) {
      fail(ErrorKind::Validation, "features and labels disagree on n/H/W");
    }
  }
  for (auto d : fshape) {
    if (d > 0xffffffffull) fail(ErrorKind::Validation, "dimension exceeds 32-bit range");
  }
  task.n = static_cast<std::uint32_t>(fshape[0]);
  task.height = static_cast<std::uint32_t>(fshape[1]);
  task.width = static_cast<std::uint32_t>(fshape[2]);
  task.channels = static_cast<std::uint32_t>(fshape[3]);

  const std::string meta_text = read_file(dir / "meta.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
    task.class_count = meta.at("class_count").get<std::uint32_t>();
    if (meta.contains("ignore_labels")) {
      for (const auto& v : meta.at("ignore_labels")) task.ignore_labels.insert(v.get<ClassId>());
    } else {
      task.ignore_labels = kDefaultIgnoreLabels;
    }
    if (meta.contains("model_id")) task.model_id = meta.at("model_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, (dir / "meta.json").string() + ": " + e.what());
  }
  validate(task);
  return task;
}

}  // namespace

void validate(const TaskExport& task) {
  if (task.n == 0 || task.height == 0 || task.width == 0 || task.channels == 0) {
    fail(ErrorKind::Validation, "n, H, W and C must all be at least 1");
  }
  if (task.class_count == 0 || task.class_count > kIgnoreSentinel) {
    fail(ErrorKind::Validation, "class_count must be in [1, 65535]");
  }
  const std::size_t pixels = task.pixel_count();
  if (task.labels.size() != pixels) {
    fail(ErrorKind::Validation, "labels hold " + std::to_string(task.labels.size()) +
                                    " values, n*H*W is " + std::to_string(pixels));
  }
  if (task.features.size() != pixels * task.channels) {
    fail(ErrorKind::Validation, "features hold " + std::to_string(task.features.size()) +
                                    " values, n*H*W*C is " +
                                    std::to_string(pixels * task.channels));
  }
  for (ClassId label : task.labels) {
    if (!task.is_ignored(label) && label >= task.class_count) {
      fail(ErrorKind::Validation, "label " + std::to_string(label) + " >= class_count " +
                                      std::to_string(task.class_count));
    }
  }
}

void validate(const PixelSet& pixels) {
  if (pixels.features.rows() != pixels.labels.size()) {
    fail(ErrorKind::Validation, "pixel set has mismatched feature rows and labels");
  }
  for (ClassId label : pixels.labels) {
    if (label >= pixels.class_count) {
      fail(ErrorKind::Validation, "label " + std::to_string(label) + " >= class_count " +
                                      std::to_string(pixels.class_count));
    }
  }
}

TaskExport load_task_export(const fs::path& path) {
  std::error_code ec;
  if (fs::is_directory(path, ec)) return load_directory(path);
  if (!fs::exists(path, ec)) fail(ErrorKind::Io, "no such file: " + path.string());
  return load_container(path);
}

void save_task_export(const TaskExport& task, const fs::path& path) {
  validate(task);
  std::string out;
  out.reserve(kHeaderBytes + 2 * task.ignore_labels.size() + task.features.size() * 4 +
              task.labels.size() * 2);
  out.append(kContainerMagic, 8);
  put_le(out, task.n);
  put_le(out, task.height);
  put_le(out, task.width);
  put_le(out, task.channels);
  put_le(out, task.class_count);
  put_le(out, static_cast<std::uint32_t>(task.ignore_labels.size()));
  for (ClassId id : task.ignore_labels) put_le(out, id);
  append_array_le(out, task.features);
  append_array_le(out, task.labels);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorKind::Io, "cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) fail(ErrorKind::Io, "write failed for " + path.string());
}

void save_task_export_dir(const TaskExport& task, const fs::path& dir) {
  validate(task);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  npy::save_float32(dir / "features.npy", task.features,
                    {task.n, task.height, task.width, task.channels});
  npy::save_uint16(dir / "labels.npy", task.labels, {task.n, task.height, task.width});
  nlohmann::json meta{{"class_count", task.class_count},
                      {"ignore_labels", std::vector<ClassId>(task.ignore_labels.begin(),
                                                             task.ignore_labels.end())}};
  if (!task.model_id.empty()) meta["model_id"] = task.model_id;
  std::ofstream file(dir / "meta.json", std::ios::trunc);
  if (!file) fail(ErrorKind::Io, "cannot write " + (dir / "meta.json").string());
  file << meta.dump(2) << '\n';
}

PixelSet flatten_to_pixelset(const TaskExport& task) {
  validate(task);
  const std::size_t c = task.channels;
  std::size_t kept = 0;
  for (ClassId label : task.labels) kept += task.is_ignored(label) ? 0 : 1;
  if (kept == 0) fail(ErrorKind::EmptySet, "every pixel carries an ignore label");

  PixelSet out;
  out.features = Matrix<float>(kept, c);
  out.labels.reserve(kept);
  out.class_count = task.class_count;
  out.model_id = task.model_id;
  std::size_t row = 0;
  for (std::size_t p = 0; p < task.labels.size(); ++p) {
    if (task.is_ignored(task.labels[p])) continue;
    std::memcpy(out.features.row(row).data(), task.features.data() + p * c, c * sizeof(float));
    out.labels.push_back(task.labels[p]);
    ++row;
  }
  return out;
}

std::vector<std::pair<ClassId, std::size_t>> class_histogram(const TaskExport& task) {
  std::map<ClassId, std::size_t> counts;
  for (ClassId label : task.labels) ++counts[label];
  return {counts.begin(), counts.end()};
}

}  // namespace otseg
