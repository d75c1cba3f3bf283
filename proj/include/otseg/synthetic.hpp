#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "otseg/eval.hpp"
#include "otseg/pixelset.hpp"

namespace otseg {

/// Gaussian-mixture task pair with controllable label relatedness.
struct SyntheticSpec {
  std::uint32_t class_count = 4;
  std::uint32_t feature_dim = 8;
  std::size_t pixels = 5000;
  /// Norm of each class mean.
  double cluster_separation = 0.5;
  /// Per-dimension standard deviation around a class mean.
  double cluster_spread = 0.15;
  /// Fraction of target labels re-drawn uniformly over all classes.
  double label_noise = 0.0;
  /// Fraction of classes whose target labels are re-drawn uniformly pixel by pixel.
  double label_map_scramble = 0.0;
  std::uint64_t seed = 0;
  std::string source_id = "source";
  std::string target_id = "target";
};

void validate(const SyntheticSpec& spec);

struct SyntheticPair {
  PixelSet source;
  PixelSet target;
  /// (1 - label_noise) * (1 - label_map_scramble); only its ordering is meaningful.
  double relatedness = 0.0;
};

SyntheticPair generate_pair(const SyntheticSpec& spec);

/// Wraps a pixel set as a [1, 1, P, C] export with no ignore labels.
TaskExport to_task_export(const PixelSet& pixels);

/// accuracy = clamp(slope * relatedness + intercept + jitter * N(0, 1), 0, 1).
struct AccuracyModel {
  double slope = 0.5;
  double intercept = 0.3;
  double jitter = 0.0;
  std::uint64_t seed = 0;
};

/// Writes one source and one target container per spec under `out_dir` plus
/// `out_dir/manifest.json`; export paths in the manifest are relative to it.
EvalManifest generate_manifest(const std::vector<SyntheticSpec>& specs,
                               const AccuracyModel& accuracy,
                               const std::filesystem::path& out_dir);

/// Suite description read by `otseg gen`.
struct SyntheticSuite {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  AccuracyModel accuracy;
  std::vector<SyntheticSpec> specs;
};

/// Per-spec seeds default to derive_seed(suite seed, index); the accuracy jitter
/// stream uses derive_seed(suite seed, spec count) unless given explicitly.
SyntheticSuite parse_suite(const nlohmann::json& j, std::optional<std::uint64_t> seed_override);

}  // namespace otseg
