#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "otseg/matrix.hpp"
#include "otseg/ot_solver.hpp"
#include "otseg/pixelset.hpp"
#include "otseg/random.hpp"

namespace otseg {

/// Empirical joint distribution of (source label, target label) induced by a coupling.
struct LabelJoint {
  Matrix<double> joint;                // [|Y_s|, |Y_t|]
  std::vector<double> source_marginal;  // row sums of `joint`

  double total() const noexcept;
  /// Column sums of `joint`.
  std::vector<double> target_marginal() const;
};

enum class OversamplePolicy { Error, Clamp };

struct SamplingConfig {
  std::size_t pixels_per_sample = 10000;
  std::size_t repetitions = 10;
  std::uint64_t seed = 0;
  OversamplePolicy policy = OversamplePolicy::Error;
  /// Equal pixel quota per present class instead of uniform pixel sampling.
  bool class_balanced = false;
  /// Standardize channels with statistics pooled over both pixel sets before sampling.
  bool standardize_features = false;
  /// Worker threads for the repetition loop.
  std::size_t jobs = 1;
};

void validate(const SamplingConfig& config);

/// Settings a score was produced with.
struct ScoreConfig {
  std::size_t pixels_per_sample = 0;
  std::size_t repetitions = 0;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  std::size_t max_iterations = 0;
  double tolerance = 0.0;
  bool log_domain = true;
  bool normalize_cost = false;
  bool standardize_features = false;
  bool class_balanced = false;

  friend bool operator==(const ScoreConfig&, const ScoreConfig&) = default;
};

/// OTCE score (nats) with diagnostics.
struct TransferScore {
  double otce = 0.0;               // = -task_difference
  double task_difference = 0.0;    // mean conditional entropy H(Y_t | Y_s)
  double domain_difference = 0.0;  // mean transport cost of the entropic plan
  std::vector<double> per_repetition;
  std::vector<double> per_repetition_domain;
  std::size_t converged_repetitions = 0;
  ScoreConfig config;
  std::vector<std::string> warnings;

  friend bool operator==(const TransferScore&, const TransferScore&) = default;
};

/// joint[y_s][y_t] = sum of pi_ij over pairs with source label y_s and target label y_t.
LabelJoint label_joint_from_coupling(const CouplingMatrix& coupling,
                                     std::span<const ClassId> source_labels,
                                     std::span<const ClassId> target_labels,
                                     std::size_t source_classes, std::size_t target_classes);

/// H(Y_t | Y_s) in nats, with 0 log 0 = 0.
double conditional_entropy(const LabelJoint& joint);

/// Shannon entropy in nats of a (sub-)probability vector, with 0 log 0 = 0.
double entropy(std::span<const double> p);

/// One OTCE evaluation on the full pixel sets (K = 1).
TransferScore otce_single(const PixelSet& source, const PixelSet& target,
                          const SinkhornConfig& solver = {});

/// Sampled OTCE: mean over K repetitions of OTCE on N uniformly drawn pixels per side.
TransferScore otce_sampled(const PixelSet& source, const PixelSet& target,
                           const SamplingConfig& sampling = {},
                           const SinkhornConfig& solver = {});

/// Pixel rows chosen for repetition `k` (ascending); exposed for tests and diagnostics.
std::vector<std::size_t> draw_sample(const PixelSet& pixels, std::size_t count,
                                     bool class_balanced, Rng& rng);

PixelSet subset(const PixelSet& pixels, std::span<const std::size_t> rows);

/// Standardizes both sets in place with per-channel statistics pooled over their union.
void standardize_pooled(PixelSet& source, PixelSet& target);

nlohmann::json to_json(const TransferScore& score);
TransferScore score_from_json(const nlohmann::json& j);

}  // namespace otseg
