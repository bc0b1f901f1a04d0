#pragma once

// Structured-text (JSON) documents: model config, synth config, predictions
// files and evaluation reports, plus the flat metric CSV.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "unicaclf/data_io.hpp"
#include "unicaclf/metrics.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

constexpr int kPredictionsVersion = 1;

namespace detail {

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: field '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const char* where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [k, _] : obj.items())
    if (!known.contains(k)) throw ConfigError(std::string(where) + ": unknown field '" + k + "'");
}

inline std::string variant_name(PyramidVariant v) {
  return v == PyramidVariant::kCap ? "cap" : "conv_baseline";
}

inline PyramidVariant parse_variant(const std::string& s) {
  if (s == "cap") return PyramidVariant::kCap;
  if (s == "conv_baseline") return PyramidVariant::kConvBaseline;
  throw ConfigError("config: variant must be 'cap' or 'conv_baseline'");
}

}  // namespace detail

inline json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"embed_dim", c.embed_dim},
          {"num_levels", c.num_levels},
          {"temperature", c.temperature},
          {"phi1", c.phi1},
          {"phi2", c.phi2},
          {"focal_gamma", c.focal_gamma},
          {"focal_alpha", c.focal_alpha},
          {"softnms_sigma", c.softnms_sigma},
          {"score_floor", c.score_floor},
          {"max_kept", c.max_kept},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"forged_threshold", c.forged_threshold},
          {"early_stop_window", c.early_stop_window},
          {"threads", c.threads},
          {"variant", detail::variant_name(c.variant)}};
}

inline json to_json(const SynthConfig& c) {
  return {{"num_samples", c.num_samples},
          {"min_instants", c.min_instants},
          {"max_instants", c.max_instants},
          {"feature_dim", c.feature_dim},
          {"instants_per_second", c.instants_per_second},
          {"forged_fraction", c.forged_fraction},
          {"min_segments", c.min_segments},
          {"max_segments", c.max_segments},
          {"min_segment_fraction", c.min_segment_fraction},
          {"max_segment_fraction", c.max_segment_fraction},
          {"anomaly_shift", c.anomaly_shift},
          {"noise_scale", c.noise_scale},
          {"context_scale", c.context_scale},
          {"context_offset", c.context_offset},
          {"context_opposition", c.context_opposition},
          {"seed", c.seed},
          {"id_prefix", c.id_prefix}};
}

inline SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  std::set<std::string> known;
  const json defaults = to_json(c);
  for (const auto& [k, _] : defaults.items()) known.insert(k);
  detail::reject_unknown(j, known, "synth config");
  detail::read_key(j, "num_samples", c.num_samples);
  detail::read_key(j, "min_instants", c.min_instants);
  detail::read_key(j, "max_instants", c.max_instants);
  detail::read_key(j, "feature_dim", c.feature_dim);
  detail::read_key(j, "instants_per_second", c.instants_per_second);
  detail::read_key(j, "forged_fraction", c.forged_fraction);
  detail::read_key(j, "min_segments", c.min_segments);
  detail::read_key(j, "max_segments", c.max_segments);
  detail::read_key(j, "min_segment_fraction", c.min_segment_fraction);
  detail::read_key(j, "max_segment_fraction", c.max_segment_fraction);
  detail::read_key(j, "anomaly_shift", c.anomaly_shift);
  detail::read_key(j, "noise_scale", c.noise_scale);
  detail::read_key(j, "context_scale", c.context_scale);
  detail::read_key(j, "context_offset", c.context_offset);
  detail::read_key(j, "context_opposition", c.context_opposition);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "id_prefix", c.id_prefix);
  c.validate();
  return c;
}

inline json to_json(const EvalConfig& c) {
  return {{"ap_thresholds", c.ap_thresholds},
          {"ar_counts", c.ar_counts},
          {"per_video_recall", c.per_video_recall},
          {"reference", c.reference}};
}

inline EvalConfig eval_config_from_json(const json& j) {
  EvalConfig c;
  detail::reject_unknown(j, {"ap_thresholds", "ar_counts", "per_video_recall", "reference"}, "eval config");
  detail::read_key(j, "ap_thresholds", c.ap_thresholds);
  detail::read_key(j, "ar_counts", c.ar_counts);
  detail::read_key(j, "per_video_recall", c.per_video_recall);
  detail::read_key(j, "reference", c.reference);
  for (double t : c.ap_thresholds)
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("eval config: AP thresholds must be in (0,1]");
  return c;
}

/// Top-level config document: ModelConfig fields, plus optional "synth" and
/// "eval" sections.
struct RunDocument {
  ModelConfig model;
  SynthConfig synth;
  EvalConfig eval;
};

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  std::set<std::string> known{"synth", "eval"};
  const json defaults = to_json(c);
  for (const auto& [k, _] : defaults.items()) known.insert(k);
  detail::reject_unknown(j, known, "config");
  detail::read_key(j, "input_dim", c.input_dim);
  detail::read_key(j, "embed_dim", c.embed_dim);
  detail::read_key(j, "num_levels", c.num_levels);
  detail::read_key(j, "temperature", c.temperature);
  detail::read_key(j, "phi1", c.phi1);
  detail::read_key(j, "phi2", c.phi2);
  detail::read_key(j, "focal_gamma", c.focal_gamma);
  detail::read_key(j, "focal_alpha", c.focal_alpha);
  detail::read_key(j, "softnms_sigma", c.softnms_sigma);
  detail::read_key(j, "score_floor", c.score_floor);
  detail::read_key(j, "max_kept", c.max_kept);
  detail::read_key(j, "learning_rate", c.learning_rate);
  detail::read_key(j, "adam_beta1", c.adam_beta1);
  detail::read_key(j, "adam_beta2", c.adam_beta2);
  detail::read_key(j, "adam_epsilon", c.adam_epsilon);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "epochs", c.epochs);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "forged_threshold", c.forged_threshold);
  detail::read_key(j, "early_stop_window", c.early_stop_window);
  detail::read_key(j, "threads", c.threads);
  if (j.contains("variant")) {
    std::string v;
    detail::read_key(j, "variant", v);
    c.variant = detail::parse_variant(v);
  }
  c.validate();
  return c;
}

inline RunDocument run_document_from_json(const json& j) {
  RunDocument d;
  d.model = model_config_from_json(j);
  if (j.contains("synth")) d.synth = synth_config_from_json(j.at("synth"));
  if (j.contains("eval")) d.eval = eval_config_from_json(j.at("eval"));
  return d;
}

inline json to_json(const RunDocument& d) {
  json j = to_json(d.model);
  j["synth"] = to_json(d.synth);
  j["eval"] = to_json(d.eval);
  return j;
}

inline json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("file not found: " + path.string());
  std::ifstream is(path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Predictions

inline json predictions_to_json(const PredictionMap& preds) {
  json videos = json::array();
  for (const auto& [id, props] : preds) {
    json list = json::array();
    for (const auto& p : props) list.push_back({{"score", p.score}, {"start", p.start}, {"end", p.end}});
    videos.push_back({{"id", id}, {"proposals", list}});
  }
  return {{"version", kPredictionsVersion}, {"videos", videos}};
}

inline PredictionMap predictions_from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != kPredictionsVersion)
      throw DataError("", "predictions: unsupported version");
    PredictionMap out;
    for (const auto& v : j.at("videos")) {
      const auto id = v.at("id").get<std::string>();
      auto& list = out[id];
      for (const auto& p : v.at("proposals"))
        list.push_back({p.at("score").get<double>(), p.at("start").get<double>(), p.at("end").get<double>()});
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError("", std::string("predictions schema: ") + e.what());
  }
}

inline TruthMap truth_map(const std::vector<Sample>& samples) {
  TruthMap m;
  for (const auto& s : samples) m[s.sequence.id] = s.truth;
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation report

inline std::string format_threshold(double thr) {
  std::ostringstream k;
  k << thr;
  return k.str();
}

inline json to_json(const EvalReport& r) {
  json ap = json::object(), ar = json::object();
  for (const auto& [thr, v] : r.ap) ap[format_threshold(thr)] = v;
  for (const auto& [n, v] : r.ar) ar[std::to_string(n)] = v;
  json videos = json::array();
  for (const auto& d : r.videos)
    videos.push_back({{"id", d.id},
                      {"num_truth", d.num_truth},
                      {"num_predictions", d.num_predictions},
                      {"best_iou_mean", d.best_iou_mean}});
  return {{"ap", ap}, {"ap_average", r.ap_average}, {"ar", ar}, {"ar_average", r.ar_average}, {"videos", videos}};
}

/// `metric,threshold_or_n,value` rows with a header line.
inline std::string metrics_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,threshold_or_n,value\n";
  for (const auto& [thr, v] : r.ap) os << "ap," << format_threshold(thr) << ',' << v << '\n';
  os << "ap_average,," << r.ap_average << '\n';
  for (const auto& [n, v] : r.ar) os << "ar," << n << ',' << v << '\n';
  os << "ar_average,," << r.ar_average << '\n';
  return os.str();
}

}  // namespace unicaclf
