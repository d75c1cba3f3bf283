#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "otseg/otce.hpp"

namespace otseg {

struct ManifestRecord {
  std::string source_id;
  std::string target_id;
  std::filesystem::path source_export;
  std::filesystem::path target_export;
  double transfer_accuracy = 0.0;
};

/// Source/target pairs with measured transfer accuracy.
struct EvalManifest {
  std::vector<ManifestRecord> records;
  std::string metadata;
  /// Name of the accuracy metric (e.g. "mIoU"); carried through, never interpreted.
  std::string metric;
  /// Relative export paths resolve against this directory.
  std::filesystem::path base_dir;
};

/// Throws Validation on duplicate (source, target) pairs or accuracy outside [0, 1].
void validate(const EvalManifest& manifest);

EvalManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const EvalManifest& manifest, const std::filesystem::path& path);

/// Sample Pearson correlation. Throws Undefined when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

/// 1-based ranks, ties receive the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

struct CorrelationStat {
  std::optional<double> pearson;
  std::optional<double> spearman;
  std::size_t n_pairs = 0;
};

struct ReportPoint {
  std::string target_id;
  std::string source_id;
  double otce = 0.0;
  double accuracy = 0.0;
  double domain_difference = 0.0;
};

struct RecordFailure {
  std::string source_id;
  std::string target_id;
  std::string message;
};

struct CorrelationReport {
  CorrelationStat pooled;
  std::map<std::string, CorrelationStat> per_target;
  std::vector<ReportPoint> points;  // sorted by (target_id, source_id)
  std::vector<RecordFailure> failures;
  std::vector<std::string> warnings;
  std::string metric;
};

struct EvalOptions {
  /// Records scored concurrently.
  std::size_t jobs = 1;
  /// Score cache directory; empty disables caching.
  std::filesystem::path cache_dir;
};

/// Minimum points before a correlation coefficient is reported.
inline constexpr std::size_t kMinCorrelationPoints = 3;

CorrelationReport run_evaluation(const EvalManifest& manifest, const SamplingConfig& sampling,
                                 const SinkhornConfig& solver, const EvalOptions& options = {});

/// Correlation over a set of points; coefficients are left empty (with a warning) when
/// fewer than three points exist or an axis is constant.
CorrelationStat correlate(std::span<const ReportPoint> points, const std::string& label,
                          std::vector<std::string>& warnings);

nlohmann::json to_json(const CorrelationReport& report);
void write_report_json(const CorrelationReport& report, const std::filesystem::path& path);
/// Columns: target_id, source_id, otce, accuracy.
void write_report_csv(const CorrelationReport& report, const std::filesystem::path& path);
/// Scatter of accuracy against OTCE for one target.
std::string render_scatter_svg(const CorrelationReport& report, const std::string& target_id);

}  // namespace otseg
