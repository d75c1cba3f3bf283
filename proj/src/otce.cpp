#include "otseg/otce.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "otseg/error.hpp"
#include "otseg/parallel.hpp"

namespace otseg {
namespace {

constexpr double kBoundSlack = 1e-9;

void check_pair(const PixelSet& source, const PixelSet& target) {
  if (source.size() == 0 || target.size() == 0) {
    fail(ErrorKind::EmptySet, "pixel sets must be non-empty");
  }
  if (source.channels() != target.channels()) {
    fail(ErrorKind::Dimension, "source has " + std::to_string(source.channels()) +
                                   " channels, target has " + std::to_string(target.channels()));
  }
  validate(source);
  validate(target);
}

// Entropy bounds every score must satisfy; a violation is a bug, not bad input.
void check_bounds(double task_difference, const LabelJoint& joint, std::size_t target_classes) {
  const double upper = std::log(static_cast<double>(target_classes));
  const double h_target = entropy(joint.target_marginal());
  if (task_difference < -kBoundSlack || task_difference > upper + kBoundSlack ||
      task_difference > h_target + kBoundSlack) {
    fail(ErrorKind::Run, "conditional entropy " + std::to_string(task_difference) +
                             " outside [0, min(ln|Y_t|, H(Y_t))]");
  }
}

struct Repetition {
  double task_difference = 0.0;
  double domain_difference = 0.0;
  bool converged = false;
};

Repetition score_once(const PixelSet& source, const PixelSet& target,
                      const SinkhornConfig& solver) {
  const CostMatrix cost = compute_cost_matrix(source.features, target.features);
  const auto a = uniform_marginal(source.size());
  const auto b = uniform_marginal(target.size());
  const CouplingMatrix plan = sinkhorn(cost, a, b, solver);
  Repetition r;
  r.domain_difference = transport_cost(cost, plan);
  r.converged = plan.converged;
  const LabelJoint joint = label_joint_from_coupling(plan, source.labels, target.labels,
                                                     source.class_count, target.class_count);
  r.task_difference = std::max(0.0, conditional_entropy(joint));
  check_bounds(r.task_difference, joint, target.class_count);
  return r;
}

ScoreConfig echo(const SinkhornConfig& solver) {
  ScoreConfig c;
  c.epsilon = solver.epsilon;
  c.max_iterations = solver.max_iterations;
  c.tolerance = solver.tolerance;
  c.log_domain = solver.log_domain;
  c.normalize_cost = solver.normalize_cost;
  return c;
}

void model_warning(const PixelSet& source, const PixelSet& target,
                   std::vector<std::string>& warnings) {
  if (source.model_id.empty() || target.model_id.empty()) {
    warnings.push_back("export does not declare a producing model id");
  } else if (source.model_id != target.model_id) {
    warnings.push_back("source and target features come from different models ('" +
                       source.model_id + "' vs '" + target.model_id + "')");
  }
}

std::vector<std::size_t> draw_balanced(const PixelSet& pixels, std::size_t count, Rng& rng) {
  std::map<ClassId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pixels.size(); ++i) groups[pixels.labels[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> by_size;
  for (const auto& [label, rows] : groups) by_size.push_back(&rows);
  std::stable_sort(by_size.begin(), by_size.end(),
                   [](auto* x, auto* y) { return x->size() < y->size(); });

  std::vector<std::size_t> out;
  out.reserve(count);
  std::size_t remaining = count;
  std::size_t left = by_size.size();
  for (const auto* rows : by_size) {
    const std::size_t share = (remaining + left - 1) / left;
    const std::size_t take = std::min(rows->size(), share);
    for (std::size_t k : sample_without_replacement(rows->size(), take, rng)) {
      out.push_back((*rows)[k]);
    }
    remaining -= take;
    --left;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double LabelJoint::total() const noexcept {
  double s = 0.0;
  for (double p : joint.values()) s += p;
  return s;
}

std::vector<double> LabelJoint::target_marginal() const {
  std::vector<double> out(joint.cols(), 0.0);
  for (std::size_t r = 0; r < joint.rows(); ++r) {
    const auto row = joint.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  return out;
}

void validate(const SamplingConfig& config) {
  if (config.pixels_per_sample == 0) fail(ErrorKind::Validation, "N must be positive");
  if (config.repetitions == 0) fail(ErrorKind::Validation, "K must be positive");
  if (config.jobs == 0) fail(ErrorKind::Validation, "jobs must be positive");
}

LabelJoint label_joint_from_coupling(const CouplingMatrix& coupling,
                                     std::span<const ClassId> source_labels,
                                     std::span<const ClassId> target_labels,
                                     std::size_t source_classes, std::size_t target_classes) {
  if (source_labels.size() != coupling.rows() || target_labels.size() != coupling.cols()) {
    fail(ErrorKind::Dimension, "label vectors do not match the coupling shape");
  }
  for (ClassId y : source_labels) {
    if (y >= source_classes) {
      fail(ErrorKind::Validation, "source label " + std::to_string(y) + " >= class count " +
                                      std::to_string(source_classes));
    }
  }
  for (ClassId y : target_labels) {
    if (y >= target_classes) {
      fail(ErrorKind::Validation, "target label " + std::to_string(y) + " >= class count " +
                                      std::to_string(target_classes));
    }
  }

  LabelJoint out;
  out.joint = Matrix<double>(source_classes, target_classes, 0.0);
  std::vector<double> bucket(target_classes);
  for (std::size_t i = 0; i < coupling.rows(); ++i) {
    std::fill(bucket.begin(), bucket.end(), 0.0);
    const auto row = coupling.values.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) bucket[target_labels[j]] += row[j];
    auto dst = out.joint.row(source_labels[i]);
    for (std::size_t t = 0; t < target_classes; ++t) dst[t] += bucket[t];
  }
  out.source_marginal.assign(source_classes, 0.0);
  for (std::size_t s = 0; s < source_classes; ++s) {
    for (double p : out.joint.row(s)) out.source_marginal[s] += p;
  }
  return out;
}

double conditional_entropy(const LabelJoint& joint) {
  double h = 0.0;
  for (std::size_t s = 0; s < joint.joint.rows(); ++s) {
    const double ps = joint.source_marginal[s];
    for (double p : joint.joint.row(s)) {
      if (p > 0.0) h -= p * std::log(p / ps);
    }
  }
  return h;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

PixelSet subset(const PixelSet& pixels, std::span<const std::size_t> rows) {
  PixelSet out;
  out.class_count = pixels.class_count;
  out.model_id = pixels.model_id;
  out.features = Matrix<float>(rows.size(), pixels.channels());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = pixels.features.row(rows[r]);
    std::copy(src.begin(), src.end(), out.features.row(r).begin());
    out.labels.push_back(pixels.labels[rows[r]]);
  }
  return out;
}

void standardize_pooled(PixelSet& source, PixelSet& target) {
  const std::size_t dims = source.channels();
  const double count = static_cast<double>(source.size() + target.size());
  std::vector<double> mean(dims, 0.0);
  std::vector<double> sq(dims, 0.0);
  for (const PixelSet* set : {&source, &target}) {
    for (std::size_t r = 0; r < set->size(); ++r) {
      const auto row = set->features.row(r);
      for (std::size_t c = 0; c < dims; ++c) mean[c] += row[c];
    }
  }
  for (auto& m : mean) m /= count;
  for (const PixelSet* set : {&source, &target}) {
    for (std::size_t r = 0; r < set->size(); ++r) {
      const auto row = set->features.row(r);
      for (std::size_t c = 0; c < dims; ++c) sq[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
    }
  }
  std::vector<double> scale(dims);
  for (std::size_t c = 0; c < dims; ++c) {
    const double sd = std::sqrt(sq[c] / count);
    scale[c] = sd > 0.0 ? 1.0 / sd : 1.0;  // constant channels are only centred
  }
  for (PixelSet* set : {&source, &target}) {
    for (std::size_t r = 0; r < set->size(); ++r) {
      auto row = set->features.row(r);
      for (std::size_t c = 0; c < dims; ++c) {
        row[c] = static_cast<float>((row[c] - mean[c]) * scale[c]);
      }
    }
  }
}

std::vector<std::size_t> draw_sample(const PixelSet& pixels, std::size_t count,
                                     bool class_balanced, Rng& rng) {
  if (count >= pixels.size()) return sample_without_replacement(pixels.size(), count, rng);
  return class_balanced ? draw_balanced(pixels, count, rng)
                        : sample_without_replacement(pixels.size(), count, rng);
}

TransferScore otce_single(const PixelSet& source, const PixelSet& target,
                          const SinkhornConfig& solver) {
  validate(solver);
  check_pair(source, target);
  const Repetition r = score_once(source, target, solver);

  TransferScore score;
  score.task_difference = r.task_difference;
  score.otce = 0.0 - r.task_difference;
  score.domain_difference = r.domain_difference;
  score.per_repetition = {score.otce};
  score.per_repetition_domain = {r.domain_difference};
  score.converged_repetitions = r.converged ? 1 : 0;
  score.config = echo(solver);
  score.config.pixels_per_sample = source.size();
  score.config.repetitions = 1;
  model_warning(source, target, score.warnings);
  if (!r.converged) score.warnings.push_back("Sinkhorn did not reach tolerance");
  return score;
}

TransferScore otce_sampled(const PixelSet& source_in, const PixelSet& target_in,
                           const SamplingConfig& sampling, const SinkhornConfig& solver) {
  validate(sampling);
  validate(solver);
  check_pair(source_in, target_in);

  TransferScore score;
  score.config = echo(solver);
  score.config.repetitions = sampling.repetitions;
  score.config.seed = sampling.seed;
  score.config.standardize_features = sampling.standardize_features;
  score.config.class_balanced = sampling.class_balanced;
  model_warning(source_in, target_in, score.warnings);

  std::size_t n = sampling.pixels_per_sample;
  const std::size_t available = std::min(source_in.size(), target_in.size());
  if (n > available) {
    if (sampling.policy == OversamplePolicy::Error) {
      fail(ErrorKind::Size, "N=" + std::to_string(n) + " exceeds available pixels (" +
                                std::to_string(source_in.size()) + " source, " +
                                std::to_string(target_in.size()) + " target)");
    }
    score.warnings.push_back("N clamped from " + std::to_string(n) + " to " +
                             std::to_string(available));
    n = available;
  }
  score.config.pixels_per_sample = n;
  if (n < std::max(source_in.class_count, target_in.class_count)) {
    score.warnings.push_back("N is smaller than the class alphabet");
  }

  PixelSet source_std;
  PixelSet target_std;
  const PixelSet* source = &source_in;
  const PixelSet* target = &target_in;
  if (sampling.standardize_features) {
    source_std = source_in;
    target_std = target_in;
    standardize_pooled(source_std, target_std);
    source = &source_std;
    target = &target_std;
  }

  const std::size_t k_total = sampling.repetitions;
  std::vector<Repetition> reps(k_total);
  parallel_for(k_total, sampling.jobs, [&](std::size_t k) {
    Rng rng(derive_seed(sampling.seed, k));
    const auto src_rows = draw_sample(*source, n, sampling.class_balanced, rng);
    const auto tgt_rows = draw_sample(*target, n, sampling.class_balanced, rng);
    const bool whole_src = src_rows.size() == source->size();
    const bool whole_tgt = tgt_rows.size() == target->size();
    const PixelSet s = whole_src ? PixelSet{} : subset(*source, src_rows);
    const PixelSet t = whole_tgt ? PixelSet{} : subset(*target, tgt_rows);
    reps[k] = score_once(whole_src ? *source : s, whole_tgt ? *target : t, solver);
  });

  // Summed in repetition order so the result is independent of scheduling.
  double task_sum = 0.0;
  double domain_sum = 0.0;
  for (const Repetition& r : reps) {
    task_sum += r.task_difference;
    domain_sum += r.domain_difference;
    score.per_repetition.push_back(0.0 - r.task_difference);
    score.per_repetition_domain.push_back(r.domain_difference);
    score.converged_repetitions += r.converged ? 1 : 0;
  }
  const double k = static_cast<double>(k_total);
  score.task_difference = task_sum / k;
  score.otce = 0.0 - score.task_difference;
  score.domain_difference = domain_sum / k;
  if (score.converged_repetitions < k_total) {
    score.warnings.push_back(std::to_string(k_total - score.converged_repetitions) +
                             " repetition(s) did not reach Sinkhorn tolerance");
  }
  return score;
}

nlohmann::json to_json(const TransferScore& score) {
  const ScoreConfig& c = score.config;
  return nlohmann::json{
      {"otce", score.otce},
      {"task_difference", score.task_difference},
      {"domain_difference", score.domain_difference},
      {"per_repetition", score.per_repetition},
      {"per_repetition_domain_difference", score.per_repetition_domain},
      {"N", c.pixels_per_sample},
      {"K", c.repetitions},
      {"seed", c.seed},
      {"epsilon", c.epsilon},
      {"converged_repetitions", score.converged_repetitions},
      {"units", "nats"},
      {"solver",
       {{"max_iterations", c.max_iterations},
        {"tolerance", c.tolerance},
        {"log_domain", c.log_domain},
        {"normalize_cost", c.normalize_cost}}},
      {"sampling",
       {{"standardize_features", c.standardize_features}, {"class_balanced", c.class_balanced}}},
      {"warnings", score.warnings},
  };
}

TransferScore score_from_json(const nlohmann::json& j) {
  TransferScore s;
  try {
    s.otce = j.at("otce").get<double>();
    s.task_difference = j.at("task_difference").get<double>();
    s.domain_difference = j.at("domain_difference").get<double>();
    s.per_repetition = j.at("per_repetition").get<std::vector<double>>();
    s.per_repetition_domain = j.at("per_repetition_domain_difference").get<std::vector<double>>();
    s.converged_repetitions = j.at("converged_repetitions").get<std::size_t>();
    s.config.pixels_per_sample = j.at("N").get<std::size_t>();
    s.config.repetitions = j.at("K").get<std::size_t>();
    s.config.seed = j.at("seed").get<std::uint64_t>();
    s.config.epsilon = j.at("epsilon").get<double>();
    const auto& solver = j.at("solver");
    s.config.max_iterations = solver.at("max_iterations").get<std::size_t>();
    s.config.tolerance = solver.at("tolerance").get<double>();
    s.config.log_domain = solver.at("log_domain").get<bool>();
    s.config.normalize_cost = solver.at("normalize_cost").get<bool>();
    const auto& sampling = j.at("sampling");
    s.config.standardize_features = sampling.at("standardize_features").get<bool>();
    s.config.class_balanced = sampling.at("class_balanced").get<bool>();
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("score report: ") + e.what());
  }
  return s;
}

}  // namespace otseg
