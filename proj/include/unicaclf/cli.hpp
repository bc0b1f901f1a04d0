#pragma once

// Command-line front end. `run` is callable in-process so tests can drive it
// with their own streams.

#include <chrono>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unicaclf/json_io.hpp"
#include "unicaclf/trainer.hpp"

namespace unicaclf::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kInvalidConfig = 3,
  kMissingFile = 4,
  kInvalidData = 5,
  kGradCheckFailed = 6,
  kDiverged = 7,
};

struct GradCheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const char* exit_code_help() {
  return "Exit codes:\n"
         "  0  success\n"
         "  1  unexpected failure (I/O, internal error)\n"
         "  2  usage error (unknown subcommand, bad or missing flag)\n"
         "  3  invalid config (schema, unknown field, out-of-range value)\n"
         "  4  missing input file (config, manifest, checkpoint, predictions)\n"
         "  5  invalid data (manifest schema, feature file, sample invariant)\n"
         "  6  gradient check failed\n"
         "  7  training diverged (non-finite loss)\n"
         "Errors are reported on stderr as one line:\n"
         "  unicaclf: error kind=<kind> exit=<code> message=<json string>\n";
}

namespace detail {

struct Options {
  std::string config, data, out, ckpt, pred;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool to_stdout = false;
  int verbosity = 1;
  std::size_t instants = 8;
  double tolerance = 1e-5;
  double step = 1e-6;
  std::size_t max_coords = 5000;
};

inline void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw MissingFileError(std::string(what) + " not found: " + path);
}

/// `key=value` with an optional `synth.` or `eval.` prefix; the value is
/// parsed as JSON and falls back to a plain string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    doc[key] = value;
  } else {
    const auto section = key.substr(0, dot);
    if (section != "synth" && section != "eval")
      throw ConfigError("override '" + key + "': only synth. and eval. sections exist");
    doc[section][key.substr(dot + 1)] = value;
  }
}

inline json load_config_json(const Options& o) {
  json doc = json::object();
  if (!o.config.empty()) {
    require_file(o.config, "config");
    doc = read_json_file(o.config);
    if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  }
  for (const auto& s : o.sets) apply_override(doc, s);
  return doc;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

class Logger {
 public:
  Logger(std::ostream& err, int verbosity) : err_(err), verbosity_(verbosity), t0_(std::chrono::steady_clock::now()) {}
  void operator()(const std::string& msg) const {
    if (verbosity_ < 1) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "[" << s << "s] " << msg << '\n';
    err_ << os.str() << std::flush;
  }

 private:
  std::ostream& err_;
  int verbosity_;
  std::chrono::steady_clock::time_point t0_;
};

inline std::string loss_csv(const Checkpoint& ck) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss\n";
  for (std::size_t i = 0; i < ck.loss_history.size(); ++i) os << i + 1 << ',' << ck.loss_history[i] << '\n';
  return os.str();
}

inline int cmd_synth(const Options& o, std::ostream& out, const Logger& log) {
  auto doc = run_document_from_json(load_config_json(o));
  if (o.seed) doc.synth.seed = *o.seed;
  const auto samples = generate_synthetic(doc.synth);
  const fs::path dir(o.out);
  const auto manifest = save_dataset(dir, samples);
  write_text_file(dir / "config.json", dump(to_json(doc)));
  log("synth: wrote " + std::to_string(samples.size()) + " samples to " + manifest.string());
  if (o.to_stdout) {
    std::ifstream is(manifest);
    out << is.rdbuf();
  }
  return kOk;
}

inline int cmd_train(const Options& o, std::ostream& out, const Logger& log, bool baseline) {
  auto doc = run_document_from_json(load_config_json(o));
  if (o.seed) doc.model.seed = *o.seed;
  if (baseline) {
    doc.model.variant = PyramidVariant::kConvBaseline;
    doc.model.phi2 = 0.0;
  }
  require_file(o.data, "manifest");
  const auto data = load_dataset(o.data);
  log(std::string(baseline ? "ablate" : "train") + ": " + std::to_string(data.size()) + " samples, " +
      std::to_string(doc.model.epochs) + " epochs");
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_text_file(dir / "config.json", dump(to_json(doc)));
  TrainOptions opt;
  opt.out_dir = dir;
  opt.log = [&](const std::string& m) { log(m); };
  const auto ck = train(doc.model, data, opt);
  save_checkpoint(dir / "checkpoint.bin", ck);
  const auto csv = loss_csv(ck);
  write_text_file(dir / "loss.csv", csv);
  log("wrote " + (dir / "checkpoint.bin").string());
  if (o.to_stdout) out << csv;
  return kOk;
}

inline int cmd_infer(const Options& o, std::ostream& out, const Logger& log) {
  require_file(o.ckpt, "checkpoint");
  require_file(o.data, "manifest");
  const auto ck = load_checkpoint(o.ckpt);
  const auto data = load_dataset(o.data);
  const auto text = dump(predictions_to_json(infer(ck, data)));
  write_text_file(o.out, text);
  write_text_file(fs::path(o.out).string() + ".config.json", dump(to_json(ck.config)));
  log("infer: " + std::to_string(data.size()) + " videos -> " + o.out);
  if (o.to_stdout) out << text;
  return kOk;
}

inline int cmd_eval(const Options& o, std::ostream& out, const Logger& log) {
  auto doc = run_document_from_json(load_config_json(o));
  require_file(o.pred, "predictions");
  require_file(o.data, "manifest");
  const auto preds = predictions_from_json(read_json_file(o.pred));
  const auto data = load_dataset(o.data);
  const auto report = evaluate(preds, truth_map(data), doc.eval);
  const fs::path dir(o.out);
  const auto text = dump(to_json(report));
  write_text_file(dir / "report.json", text);
  write_text_file(dir / "metrics.csv", metrics_csv(report));
  write_text_file(dir / "config.json", dump(to_json(doc.eval)));
  std::ostringstream os;
  os << "eval: ap_average=" << report.ap_average << " ar_average=" << report.ar_average;
  log(os.str());
  if (o.to_stdout) out << text;
  return kOk;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out, const Logger& log) {
  auto doc = run_document_from_json(load_config_json(o));
  if (o.seed) doc.model.seed = *o.seed;
  const auto ck = fresh_checkpoint(doc.model);
  const auto sample = gradcheck_sample(o.instants, doc.model.input_dim, doc.model.seed);
  GradCheckOptions gopt;
  gopt.tolerance = o.tolerance;
  gopt.step = o.step;
  gopt.max_coordinates = o.max_coords;
  gopt.seed = doc.model.seed;
  const auto r = grad_check_model(doc.model, ck.params, sample, gopt);
  const json report{{"checked", r.checked},
                    {"max_relative_error", r.max_relative_error},
                    {"max_absolute_error", r.max_absolute_error},
                    {"worst_parameter", r.worst_name},
                    {"worst_analytic", r.worst_analytic},
                    {"worst_numeric", r.worst_numeric},
                    {"tolerance", gopt.tolerance},
                    {"step", gopt.step},
                    {"instants", o.instants},
                    {"passed", r.passed}};
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    write_text_file(dir / "gradcheck.json", dump(report));
    write_text_file(dir / "config.json", dump(to_json(doc)));
  }
  std::ostringstream os;
  os << "gradcheck: " << r.checked << " coordinates, max_relative_error=" << r.max_relative_error
     << (r.passed ? " PASS" : " FAIL (worst " + r.worst_name + ")");
  log(os.str());
  if (o.to_stdout) out << dump(report);
  if (!r.passed) throw GradCheckFailure(os.str());
  return kOk;
}

}  // namespace detail

inline std::string error_line(const char* kind, int code, const std::string& message) {
  return std::string("unicaclf: error kind=") + kind + " exit=" + std::to_string(code) +
         " message=" + json(message).dump() + "\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Temporal forgery localization on instant-feature sequences", "unicaclf"};
  app.footer(exit_code_help());
  app.require_subcommand(1);
  detail::Options o;
  bool quiet = false, verbose = false;

  auto common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("--config", o.config, "Config file (model fields plus optional synth/eval sections)");
      sub->add_option("--set", o.sets, "Override a config field, key=value (synth.key / eval.key for sections)");
    }
    sub->add_flag("--stdout", o.to_stdout, "Also write the primary output to standard output");
    sub->add_flag("-q,--quiet", quiet, "No log lines on stderr");
    sub->add_flag("-v,--verbose", verbose, "Extra log lines on stderr");
  };

  auto* synth = app.add_subcommand("synth", "Generate a planted-anomaly dataset");
  common(synth, true);
  synth->add_option("--out", o.out, "Output dataset directory")->required();
  synth->add_option("--seed", o.seed, "Override synth.seed");

  auto* trn = app.add_subcommand("train", "Train a model and write checkpoint.bin and loss.csv");
  auto* abl = app.add_subcommand("ablate", "Train the convolution baseline (no contrastive term)");
  for (auto* sub : {trn, abl}) {
    common(sub, true);
    sub->add_option("--data", o.data, "Dataset manifest")->required();
    sub->add_option("--out", o.out, "Output run directory")->required();
    sub->add_option("--seed", o.seed, "Override the model seed");
  }

  auto* inf = app.add_subcommand("infer", "Write ranked proposals for every video of a dataset");
  common(inf, false);
  inf->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  inf->add_option("--data", o.data, "Dataset manifest")->required();
  inf->add_option("--out", o.out, "Predictions file")->required();

  auto* ev = app.add_subcommand("eval", "Score predictions; writes report.json and metrics.csv");
  common(ev, true);
  ev->add_option("--pred", o.pred, "Predictions file")->required();
  ev->add_option("--data", o.data, "Dataset manifest with ground truth")->required();
  ev->add_option("--out", o.out, "Report directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the training objective");
  common(gc, true);
  gc->add_option("--seed", o.seed, "Parameter and sample seed");
  gc->add_option("--instants", o.instants, "Instants in the probe sample")->capture_default_str();
  gc->add_option("--step", o.step, "Central-difference step")->capture_default_str();
  gc->add_option("--tolerance", o.tolerance, "Maximum relative error")->capture_default_str();
  gc->add_option("--max-coords", o.max_coords, "Coordinates checked (random subset above this)")->capture_default_str();
  gc->add_option("--out", o.out, "Optional report directory");

  if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
    err << error_line("usage", kUsage, std::string("unknown subcommand '") + argv[1] + "'");
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", kUsage, e.what());
    return kUsage;
  }
  o.verbosity = quiet ? 0 : (verbose ? 2 : 1);
  detail::Logger log(err, o.verbosity);

  try {
    if (synth->parsed()) return detail::cmd_synth(o, out, log);
    if (trn->parsed()) return detail::cmd_train(o, out, log, false);
    if (abl->parsed()) return detail::cmd_train(o, out, log, true);
    if (inf->parsed()) return detail::cmd_infer(o, out, log);
    if (ev->parsed()) return detail::cmd_eval(o, out, log);
    if (gc->parsed()) return detail::cmd_gradcheck(o, out, log);
  } catch (const ConfigError& e) {
    err << error_line("config", kInvalidConfig, e.what());
    return kInvalidConfig;
  } catch (const MissingFileError& e) {
    err << error_line("missing_file", kMissingFile, e.what());
    return kMissingFile;
  } catch (const DataError& e) {
    err << error_line("data", kInvalidData, e.what());
    return kInvalidData;
  } catch (const GradCheckFailure& e) {
    err << error_line("gradcheck", kGradCheckFailed, e.what());
    return kGradCheckFailed;
  } catch (const DivergenceError& e) {
    err << error_line("diverged", kDiverged, e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    err << error_line("failure", kFailure, e.what());
    return kFailure;
  }
  err << error_line("usage", kUsage, "no subcommand");
  return kUsage;
}

}  // namespace unicaclf::cli
