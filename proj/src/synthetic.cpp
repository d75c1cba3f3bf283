#include "otseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "otseg/error.hpp"
#include "otseg/random.hpp"

namespace otseg {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kGeometrySeed = 0x6f7463652d67656full;

bool unit_interval(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

// Cluster geometry depends on the shape parameters only, so specs that differ in
// seed alone share their class means.
Matrix<double> class_means(const SyntheticSpec& spec) {
  Rng rng(derive_seed(kGeometrySeed, spec.class_count * 65536ull + spec.feature_dim));
  Matrix<double> means(spec.class_count, spec.feature_dim);
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    auto row = means.row(c);
    double norm = 0.0;
    while (norm == 0.0) {
      for (auto& x : row) x = rng.normal();
      norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    }
    for (auto& x : row) x *= spec.cluster_separation / norm;
  }
  return means;
}

PixelSet draw_pixels(const SyntheticSpec& spec, const Matrix<double>& means, Rng& rng) {
  PixelSet out;
  out.class_count = spec.class_count;
  out.features = Matrix<float>(spec.pixels, spec.feature_dim);
  out.labels.resize(spec.pixels);
  for (std::size_t p = 0; p < spec.pixels; ++p) {
    const auto label = static_cast<ClassId>(rng.below(spec.class_count));
    out.labels[p] = label;
    auto row = out.features.row(p);
    const auto mean = means.row(label);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = static_cast<float>(mean[c] + spec.cluster_spread * rng.normal());
    }
  }
  return out;
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  if (spec.class_count < 2 || spec.class_count > 65534) {
    fail(ErrorKind::Validation, "class_count must be in [2, 65534]");
  }
  if (spec.feature_dim == 0) fail(ErrorKind::Validation, "feature_dim must be positive");
  if (spec.pixels == 0) fail(ErrorKind::Validation, "pixels must be positive");
  if (!std::isfinite(spec.cluster_separation) || spec.cluster_separation < 0.0) {
    fail(ErrorKind::Validation, "cluster_separation must be finite and non-negative");
  }
  if (!std::isfinite(spec.cluster_spread) || spec.cluster_spread < 0.0) {
    fail(ErrorKind::Validation, "cluster_spread must be finite and non-negative");
  }
  if (!unit_interval(spec.label_noise)) fail(ErrorKind::Validation, "label_noise not in [0, 1]");
  if (!unit_interval(spec.label_map_scramble)) {
    fail(ErrorKind::Validation, "label_map_scramble not in [0, 1]");
  }
}

SyntheticPair generate_pair(const SyntheticSpec& spec) {
  validate(spec);
  const Matrix<double> means = class_means(spec);
  Rng source_rng(derive_seed(spec.seed, 1));
  Rng target_rng(derive_seed(spec.seed, 2));
  Rng label_rng(derive_seed(spec.seed, 3));

  SyntheticPair pair;
  pair.source = draw_pixels(spec, means, source_rng);
  pair.target = draw_pixels(spec, means, target_rng);

  // Pixels of scrambled classes lose their correspondence and get a uniform label.
  const auto scrambled = static_cast<std::size_t>(
      std::llround(spec.label_map_scramble * static_cast<double>(spec.class_count)));
  std::vector<ClassId> perm(spec.class_count);
  std::iota(perm.begin(), perm.end(), ClassId{0});
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[label_rng.below(i + 1)]);
  }
  std::vector<char> in_block(spec.class_count, 0);
  for (std::size_t i = 0; i < scrambled; ++i) in_block[perm[i]] = 1;

  for (auto& label : pair.target.labels) {
    if (in_block[label]) label = static_cast<ClassId>(label_rng.below(spec.class_count));
    if (label_rng.uniform() < spec.label_noise) {
      label = static_cast<ClassId>(label_rng.below(spec.class_count));
    }
  }
  pair.relatedness = (1.0 - spec.label_noise) * (1.0 - spec.label_map_scramble);
  return pair;
}

TaskExport to_task_export(const PixelSet& pixels) {
  TaskExport task;
  task.n = 1;
  task.height = 1;
  task.width = static_cast<std::uint32_t>(pixels.size());
  task.channels = static_cast<std::uint32_t>(pixels.channels());
  task.class_count = pixels.class_count;
  task.features.assign(pixels.features.values().begin(), pixels.features.values().end());
  task.labels = pixels.labels;
  task.model_id = pixels.model_id;
  return task;
}

EvalManifest generate_manifest(const std::vector<SyntheticSpec>& specs,
                               const AccuracyModel& accuracy, const fs::path& out_dir) {
  if (specs.size() < 3) fail(ErrorKind::Validation, "a synthetic manifest needs >= 3 specs");
  for (const auto& s : specs) validate(s);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  EvalManifest manifest;
  manifest.metadata = "synthetic Gaussian-mixture suite";
  manifest.metric = "synthetic_accuracy";
  manifest.base_dir = out_dir;
  Rng jitter(accuracy.seed);
  for (const auto& spec : specs) {
    const SyntheticPair pair = generate_pair(spec);
    const std::string stem = spec.source_id + "__" + spec.target_id;
    const fs::path src = stem + ".src.otseg";
    const fs::path tgt = stem + ".tgt.otseg";
    save_task_export(to_task_export(pair.source), out_dir / src);
    save_task_export(to_task_export(pair.target), out_dir / tgt);
    const double noise = accuracy.jitter > 0.0 ? accuracy.jitter * jitter.normal() : 0.0;
    const double acc =
        std::clamp(accuracy.slope * pair.relatedness + accuracy.intercept + noise, 0.0, 1.0);
    manifest.records.push_back({spec.source_id, spec.target_id, src, tgt, acc});
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

SyntheticSuite parse_suite(const nlohmann::json& j, std::optional<std::uint64_t> seed_override) {
  SyntheticSuite suite;
  try {
    suite.seed = seed_override ? *seed_override : j.value("seed", std::uint64_t{0});
    suite.output_dir = j.value("output_dir", std::string("synthetic_suite"));
    const auto& specs = j.at("specs");
    if (j.contains("accuracy_model")) {
      const auto& a = j.at("accuracy_model");
      suite.accuracy.slope = a.value("slope", suite.accuracy.slope);
      suite.accuracy.intercept = a.value("intercept", suite.accuracy.intercept);
      suite.accuracy.jitter = a.value("jitter", suite.accuracy.jitter);
    }
    suite.accuracy.seed = derive_seed(suite.seed, specs.size());
    std::size_t index = 0;
    for (const auto& s : specs) {
      SyntheticSpec spec;
      spec.class_count = s.value("class_count", spec.class_count);
      spec.feature_dim = s.value("feature_dim", spec.feature_dim);
      spec.pixels = s.value("pixels", spec.pixels);
      spec.cluster_separation = s.value("cluster_separation", spec.cluster_separation);
      spec.cluster_spread = s.value("cluster_spread", spec.cluster_spread);
      spec.label_noise = s.value("label_noise", spec.label_noise);
      spec.label_map_scramble = s.value("label_map_scramble", spec.label_map_scramble);
      spec.seed = s.value("seed", derive_seed(suite.seed, index));
      spec.source_id = s.value("source_id", "s" + std::to_string(index));
      spec.target_id = s.value("target_id", std::string("t0"));
      validate(spec);
      suite.specs.push_back(std::move(spec));
      ++index;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, std::string("suite spec: ") + e.what());
  }
  return suite;
}

}  // namespace otseg
