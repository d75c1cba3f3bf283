// otseg: score, eval, gen and info subcommands.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "otseg/error.hpp"
#include "otseg/eval.hpp"
#include "otseg/otce.hpp"
#include "otseg/pixelset.hpp"
#include "otseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace otseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRun = 1;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Format:
      return kExitIo;
    case ErrorKind::Run:
    case ErrorKind::Overflow:
      return kExitRun;
    default:
      return kExitValidation;
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) fail(ErrorKind::Io, "cannot write " + path.string());
}

// Parses JSON text, reporting syntax errors as line/column.
nlohmann::json parse_json(const std::string& text, const fs::path& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string what = e.what();
    if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
    fail(ErrorKind::Validation, origin.string() + ":" + std::to_string(line) + ":" +
                                    std::to_string(column) + ": malformed JSON (line " +
                                    std::to_string(line) + ", column " + std::to_string(column) +
                                    "): " + what);
  }
}

// Flags shared by score and eval.
struct RunFlags {
  SamplingConfig sampling;
  SinkhornConfig solver;
  bool dense = false;
  bool clamp = false;
  std::string config_file;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App& app) {
    options["n"] = app.add_option("--n", sampling.pixels_per_sample,
                                  "pixels sampled per task and repetition")
                       ->capture_default_str();
    options["k"] = app.add_option("--k", sampling.repetitions, "repetitions")
                       ->capture_default_str();
    options["seed"] = app.add_option("--seed", sampling.seed, "sampling seed")
                          ->capture_default_str();
    options["epsilon"] = app.add_option("--epsilon", solver.epsilon, "entropic regularization")
                             ->capture_default_str();
    options["max_iterations"] =
        app.add_option("--max-iter", solver.max_iterations, "Sinkhorn iteration cap")
            ->capture_default_str();
    options["tolerance"] =
        app.add_option("--tol", solver.tolerance, "marginal violation tolerance")
            ->capture_default_str();
    options["dense"] = app.add_flag("--dense", dense, "plain exp-kernel iterations");
    options["normalize_cost"] =
        app.add_flag("--normalize-cost", solver.normalize_cost, "divide costs by their maximum");
    options["standardize_features"] = app.add_flag(
        "--standardize", sampling.standardize_features, "pooled per-channel standardization");
    options["class_balanced"] =
        app.add_flag("--class-balanced", sampling.class_balanced, "equal quota per class");
    options["clamp"] =
        app.add_flag("--clamp", clamp, "clamp N to the smaller pixel set instead of failing");
    options["jobs"] = app.add_option("--jobs", sampling.jobs, "worker threads")
                          ->capture_default_str();
    app.add_option("--config", config_file, "JSON file with defaults for these flags");
  }

  bool explicit_flag(const std::string& key) const {
    auto it = options.find(key);
    return it != options.end() && it->second->count() > 0;
  }

  // Config-file values apply only where no flag was given.
  void resolve() {
    if (!config_file.empty()) {
      const auto j = parse_json(read_text(config_file), config_file);
      if (!j.is_object()) fail(ErrorKind::Validation, config_file + ": expected a JSON object");
      static const std::set<std::string> known{
          "n", "k", "seed", "epsilon", "max_iterations", "tolerance", "dense", "log_domain",
          "normalize_cost", "standardize_features", "class_balanced", "clamp", "jobs"};
      try {
        for (const auto& [key, value] : j.items()) {
          if (!known.contains(key)) {
            fail(ErrorKind::Validation, config_file + ": unknown key '" + key + "'");
          }
          if (explicit_flag(key == "log_domain" ? "dense" : key)) continue;
          if (key == "n") sampling.pixels_per_sample = value.get<std::size_t>();
          if (key == "k") sampling.repetitions = value.get<std::size_t>();
          if (key == "seed") sampling.seed = value.get<std::uint64_t>();
          if (key == "epsilon") solver.epsilon = value.get<double>();
          if (key == "max_iterations") solver.max_iterations = value.get<std::size_t>();
          if (key == "tolerance") solver.tolerance = value.get<double>();
          if (key == "dense") dense = value.get<bool>();
          if (key == "log_domain") dense = !value.get<bool>();
          if (key == "normalize_cost") solver.normalize_cost = value.get<bool>();
          if (key == "standardize_features") sampling.standardize_features = value.get<bool>();
          if (key == "class_balanced") sampling.class_balanced = value.get<bool>();
          if (key == "clamp") clamp = value.get<bool>();
          if (key == "jobs") sampling.jobs = value.get<std::size_t>();
        }
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Validation, config_file + ": " + e.what());
      }
    }
    solver.log_domain = !dense;
    sampling.policy = clamp ? OversamplePolicy::Clamp : OversamplePolicy::Error;
    validate(sampling);
    validate(solver);
  }
};

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_score(RunFlags& flags, const fs::path& src, const fs::path& tgt, const std::string& out) {
  flags.resolve();
  const PixelSet source = flatten_to_pixelset(load_task_export(src));
  const PixelSet target = flatten_to_pixelset(load_task_export(tgt));
  const TransferScore score = otce_sampled(source, target, flags.sampling, flags.solver);
  const std::string text = to_json(score).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  print_warnings(score.warnings);
  return kExitOk;
}

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) {
    out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  }
  return out;
}

int cmd_eval(RunFlags& flags, const fs::path& manifest_path, const fs::path& out_dir, bool plots,
             std::string cache_dir, bool no_cache) {
  flags.resolve();
  const EvalManifest manifest = load_manifest(manifest_path);
  if (manifest.records.empty()) fail(ErrorKind::Validation, "manifest has no records");
  EvalOptions options;
  options.jobs = flags.sampling.jobs;
  if (cache_dir.empty()) {
    if (const char* env = std::getenv("OTSEG_CACHE_DIR")) cache_dir = env;
  }
  if (!no_cache) options.cache_dir = cache_dir;

  SamplingConfig sampling = flags.sampling;
  sampling.jobs = 1;  // parallelism goes to records
  const CorrelationReport report = run_evaluation(manifest, sampling, flags.solver, options);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  write_report_json(report, out_dir / "report.json");
  write_report_csv(report, out_dir / "report.csv");
  if (plots) {
    for (const auto& [target, stat] : report.per_target) {
      write_text(out_dir / ("scatter_" + safe_name(target) + ".svg"),
                 render_scatter_svg(report, target));
    }
  }

  const auto show = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  for (const auto& [target, stat] : report.per_target) {
    std::cout << "target " << target << ": n=" << stat.n_pairs << " pearson=" << show(stat.pearson)
              << " spearman=" << show(stat.spearman) << '\n';
  }
  std::cout << "pooled: n=" << report.pooled.n_pairs << " pearson=" << show(report.pooled.pearson)
            << " spearman=" << show(report.pooled.spearman) << '\n';
  for (const auto& f : report.failures) {
    std::cerr << "failed: " << f.source_id << " -> " << f.target_id << ": " << f.message << '\n';
  }
  print_warnings(report.warnings);
  return kExitOk;
}

int cmd_gen(const fs::path& spec_file, std::optional<std::uint64_t> seed, const std::string& out) {
  const auto j = parse_json(read_text(spec_file), spec_file);
  SyntheticSuite suite = parse_suite(j, seed);
  if (!out.empty()) suite.output_dir = out;
  const EvalManifest m = generate_manifest(suite.specs, suite.accuracy, suite.output_dir);
  std::cout << "wrote " << 2 * m.records.size() << " exports and "
            << (suite.output_dir / "manifest.json").string() << '\n';
  return kExitOk;
}

int cmd_info(const fs::path& path, bool as_json) {
  const TaskExport task = load_task_export(path);
  const auto histogram = class_histogram(task);
  std::size_t ignored = 0;
  for (ClassId label : task.labels) ignored += task.is_ignored(label) ? 1 : 0;
  if (as_json) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [label, count] : histogram) hist[std::to_string(label)] = count;
    nlohmann::json j{{"path", path.string()},
                     {"n", task.n},
                     {"height", task.height},
                     {"width", task.width},
                     {"channels", task.channels},
                     {"class_count", task.class_count},
                     {"ignore_labels", task.ignore_labels},
                     {"pixels", task.pixel_count()},
                     {"ignored_pixels", ignored},
                     {"class_histogram", hist}};
    j["model_id"] = task.model_id.empty() ? nlohmann::json(nullptr) : nlohmann::json(task.model_id);
    std::cout << j.dump(2) << '\n';
    return kExitOk;
  }
  std::cout << "n=" << task.n << " H=" << task.height << " W=" << task.width
            << " C=" << task.channels << '\n'
            << "classes: " << task.class_count << '\n'
            << "pixels: " << task.pixel_count() << " (" << ignored << " ignored)\n"
            << "model: " << (task.model_id.empty() ? "(undeclared)" : task.model_id) << '\n'
            << "class histogram:\n";
  for (const auto& [label, count] : histogram) std::cout << "  " << label << ": " << count << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OTCE transferability scores for semantic segmentation task exports"};
  app.require_subcommand(1);

  RunFlags score_flags;
  std::string src, tgt, score_out;
  auto* score = app.add_subcommand("score", "score one source/target export pair");
  score->add_option("--src", src, "source task export")->required();
  score->add_option("--tgt", tgt, "target task export")->required();
  score->add_option("--out", score_out, "write the score JSON here instead of stdout");
  score_flags.add(*score);

  RunFlags eval_flags;
  std::string manifest, out_dir = ".", cache_dir;
  bool plots = false, no_cache = false;
  auto* eval = app.add_subcommand("eval", "correlate scores with transfer accuracy");
  eval->add_option("manifest", manifest, "manifest JSON")->required();
  eval->add_option("--out-dir", out_dir, "report directory")->capture_default_str();
  eval->add_flag("--plots", plots, "write one scatter SVG per target");
  eval->add_option("--cache-dir", cache_dir, "score cache (default: $OTSEG_CACHE_DIR)");
  eval->add_flag("--no-cache", no_cache, "ignore the score cache");
  eval_flags.add(*eval);

  std::string spec_file, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen", "generate a synthetic suite and manifest");
  gen->add_option("spec", spec_file, "suite description JSON")->required();
  gen->add_option("--seed", gen_seed, "override the suite seed");
  gen->add_option("--out", gen_out, "output directory (overrides output_dir)");

  std::string info_path;
  bool info_json = false;
  auto* info = app.add_subcommand("info", "summarize a task export");
  info->add_option("export", info_path, "task export")->required();
  info->add_flag("--json", info_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*score) return cmd_score(score_flags, src, tgt, score_out);
    if (*eval) return cmd_eval(eval_flags, manifest, out_dir, plots, cache_dir, no_cache);
    if (*gen) return cmd_gen(spec_file, gen_seed, gen_out);
    if (*info) return cmd_info(info_path, info_json);
  } catch (const Error& e) {
    std::cerr << "otseg: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "otseg: io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "otseg: " << e.what() << '\n';
    return kExitRun;
  }
  return kExitRun;
}
