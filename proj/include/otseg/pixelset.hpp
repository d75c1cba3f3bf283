#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "otseg/matrix.hpp"

namespace otseg {

using ClassId = std::uint16_t;

/// Label value that is ignored regardless of an export's ignore set.
inline constexpr ClassId kIgnoreSentinel = 65535;

/// Default ignore set: the usual Cityscapes "void" id.
inline const std::set<ClassId> kDefaultIgnoreLabels{255};

/// Feature maps and label masks exported for one task.
///
/// `features` is row-major [n][H][W][C], `labels` is row-major [n][H][W].
struct TaskExport {
  std::uint32_t n = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::uint32_t class_count = 0;
  std::set<ClassId> ignore_labels;
  std::vector<float> features;
  std::vector<ClassId> labels;
  /// Producing model; only the directory layout carries it (meta.json "model_id").
  std::string model_id;

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(n) * height * width;
  }
  bool is_ignored(ClassId label) const noexcept {
    return label == kIgnoreSentinel || ignore_labels.contains(label);
  }

  friend bool operator==(const TaskExport&, const TaskExport&) = default;
};

/// Flattened (feature, label) pairs of one task.
struct PixelSet {
  Matrix<float> features;  // [P, C]
  std::vector<ClassId> labels;
  std::uint32_t class_count = 0;
  std::string model_id;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const noexcept { return features.cols(); }
};

/// Throws Validation errors when the export breaks its shape or label invariants.
void validate(const TaskExport& task);

/// Throws Validation errors when rows and labels disagree or a label is out of range.
void validate(const PixelSet& pixels);

/// Loads a `.otseg` container or a directory with features.npy, labels.npy, meta.json.
TaskExport load_task_export(const std::filesystem::path& path);

/// Writes the little-endian container. Validates first; nothing is written on failure.
void save_task_export(const TaskExport& task, const std::filesystem::path& path);

/// Writes the directory layout (features.npy, labels.npy, meta.json).
void save_task_export_dir(const TaskExport& task, const std::filesystem::path& dir);

/// Keeps every non-ignored pixel, in row-major (image, row, column) order.
PixelSet flatten_to_pixelset(const TaskExport& task);

/// Per-class pixel counts over all labels, ignored ones included, keyed by label.
std::vector<std::pair<ClassId, std::size_t>> class_histogram(const TaskExport& task);

}  // namespace otseg
