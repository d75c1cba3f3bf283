#include "otseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "otseg/error.hpp"
#include "otseg/parallel.hpp"

namespace otseg {
namespace {

namespace fs = std::filesystem;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_file(const fs::path& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

std::uint64_t hash_export(const fs::path& path) {
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const char* name : {"features.npy", "labels.npy", "meta.json"}) {
      h = hash_file(path / name, h);
    }
    return h;
  }
  return hash_file(path, 0xcbf29ce484222325ull);
}

std::string cache_key(const fs::path& source, const fs::path& target,
                      const SamplingConfig& sampling, const SinkhornConfig& solver) {
  std::ostringstream cfg;
  cfg.precision(17);
  cfg << hash_export(source) << '|' << hash_export(target) << '|' << sampling.pixels_per_sample
      << '|' << sampling.repetitions << '|' << sampling.seed << '|'
      << static_cast<int>(sampling.policy) << '|' << sampling.class_balanced << '|'
      << sampling.standardize_features << '|' << solver.epsilon << '|' << solver.max_iterations
      << '|' << solver.tolerance << '|' << solver.log_domain << '|' << solver.normalize_cost;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(cfg.str())));
  return hex;
}

std::optional<TransferScore> read_cache(const fs::path& file) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    return score_from_json(nlohmann::json::parse(in));
  } catch (const std::exception&) {
    return std::nullopt;  // stale or partial entry; recompute
  }
}

void write_cache(const fs::path& file, const TransferScore& score) {
  std::error_code ec;
  fs::create_directories(file.parent_path(), ec);
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) return;
    out << to_json(score).dump();
  }
  fs::rename(tmp, file, ec);
}

fs::path resolve(const EvalManifest& manifest, const fs::path& p) {
  return p.is_absolute() || manifest.base_dir.empty() ? p : manifest.base_dir / p;
}

TransferScore score_record(const EvalManifest& manifest, const ManifestRecord& record,
                           const SamplingConfig& sampling, const SinkhornConfig& solver,
                           const EvalOptions& options) {
  const fs::path src = resolve(manifest, record.source_export);
  const fs::path tgt = resolve(manifest, record.target_export);
  fs::path cache_file;
  if (!options.cache_dir.empty()) {
    cache_file = options.cache_dir / (cache_key(src, tgt, sampling, solver) + ".json");
    if (auto hit = read_cache(cache_file)) return *hit;
  }
  const PixelSet source = flatten_to_pixelset(load_task_export(src));
  const PixelSet target = flatten_to_pixelset(load_task_export(tgt));
  TransferScore score = otce_sampled(source, target, sampling, solver);
  if (!cache_file.empty()) write_cache(cache_file, score);
  return score;
}

}  // namespace

void validate(const EvalManifest& manifest) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : manifest.records) {
    if (!seen.emplace(r.source_id, r.target_id).second) {
      fail(ErrorKind::Validation, "duplicate record (" + r.source_id + ", " + r.target_id + ")");
    }
    if (!std::isfinite(r.transfer_accuracy) || r.transfer_accuracy < 0.0 ||
        r.transfer_accuracy > 1.0) {
      fail(ErrorKind::Validation, "accuracy for (" + r.source_id + ", " + r.target_id +
                                      ") is outside [0, 1]");
    }
  }
}

EvalManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
  EvalManifest m;
  m.base_dir = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.metadata = j.value("metadata", "");
    m.metric = j.value("metric", "");
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.source_id = r.at("source_id").get<std::string>();
      rec.target_id = r.at("target_id").get<std::string>();
      rec.source_export = r.at("source_export").get<std::string>();
      rec.target_export = r.at("target_export").get<std::string>();
      rec.transfer_accuracy = r.at("transfer_accuracy").get<double>();
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, path.string() + ": " + e.what());
  }
  validate(m);
  return m;
}

void save_manifest(const EvalManifest& manifest, const fs::path& path) {
  validate(manifest);
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : manifest.records) {
    records.push_back({{"source_id", r.source_id},
                       {"target_id", r.target_id},
                       {"source_export", r.source_export.generic_string()},
                       {"target_export", r.target_export.generic_string()},
                       {"transfer_accuracy", r.transfer_accuracy}});
  }
  const nlohmann::json j{
      {"metadata", manifest.metadata}, {"metric", manifest.metric}, {"records", records}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::Dimension, "pearson inputs differ in length");
  if (x.size() < 2) fail(ErrorKind::Validation, "pearson needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorKind::Undefined, "correlation is undefined for a constant input");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::Dimension, "spearman inputs differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

CorrelationStat correlate(std::span<const ReportPoint> points, const std::string& label,
                          std::vector<std::string>& warnings) {
  CorrelationStat stat;
  stat.n_pairs = points.size();
  if (points.size() < kMinCorrelationPoints) {
    warnings.push_back(label + ": only " + std::to_string(points.size()) +
                       " point(s), correlation omitted");
    return stat;
  }
  std::vector<double> scores;
  std::vector<double> accs;
  for (const auto& p : points) {
    scores.push_back(p.otce);
    accs.push_back(p.accuracy);
  }
  try {
    stat.pearson = pearson(scores, accs);
    stat.spearman = spearman(scores, accs);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Undefined) throw;
    stat.pearson.reset();
    stat.spearman.reset();
    warnings.push_back(label + ": " + e.what());
  }
  return stat;
}

CorrelationReport run_evaluation(const EvalManifest& manifest, const SamplingConfig& sampling,
                                 const SinkhornConfig& solver, const EvalOptions& options) {
  validate(manifest);
  validate(sampling);
  validate(solver);
  if (manifest.records.empty()) fail(ErrorKind::Validation, "manifest has no records");

  std::vector<ManifestRecord> records = manifest.records;
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.target_id, a.source_id) < std::tie(b.target_id, b.source_id);
  });

  std::vector<std::optional<TransferScore>> scores(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), options.jobs, [&](std::size_t i) {
    try {
      scores[i] = score_record(manifest, records[i], sampling, solver, options);
    } catch (const Error& e) {
      errors[i] = std::string(to_string(e.kind())) + ": " + e.what();
    }
  });

  CorrelationReport report;
  report.metric = manifest.metric;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!scores[i]) {
      report.failures.push_back({r.source_id, r.target_id, errors[i]});
      continue;
    }
    report.points.push_back(
        {r.target_id, r.source_id, scores[i]->otce, r.transfer_accuracy,
         scores[i]->domain_difference});
    for (const auto& w : scores[i]->warnings) {
      report.warnings.push_back(r.source_id + " -> " + r.target_id + ": " + w);
    }
  }
  if (report.points.empty()) fail(ErrorKind::Run, "every manifest record failed");

  for (auto first = report.points.begin(); first != report.points.end();) {
    auto last = std::find_if(first, report.points.end(),
                             [&](const auto& p) { return p.target_id != first->target_id; });
    report.per_target[first->target_id] =
        correlate(std::span(first, last), "target " + first->target_id, report.warnings);
    first = last;
  }
  report.pooled = correlate(report.points, "pooled", report.warnings);
  return report;
}

}  // namespace otseg
