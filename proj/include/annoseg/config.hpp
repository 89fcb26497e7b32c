#pragma once

// The run description shared by every CLI command, read from a JSON
// document. Unknown keys are rejected; validation reports every violated
// constraint at once.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "annoseg/augment.hpp"
#include "annoseg/error.hpp"
#include "annoseg/eval.hpp"
#include "annoseg/fcn/network.hpp"
#include "annoseg/fcn/train.hpp"
#include "annoseg/infer.hpp"
#include "annoseg/model.hpp"
#include "annoseg/synth.hpp"

namespace annoseg {

enum class SamplerKind { kRandomCrop, kInception, kBinarizedCrop };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::kRandomCrop: return "random-crop";
    case SamplerKind::kInception: return "inception";
    case SamplerKind::kBinarizedCrop: return "binarized-crop";
  }
  return "?";
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kInception;
  int patch = 512;  // crop size for random crops, output size for inception
  InceptionSamplerConfig inception{};
};

enum class Precision { kFloat, kDouble };

struct RunConfig {
  std::uint64_t seed = 42;
  int threads = 1;

  // Existing dataset root (manifest.json layout); empty means "generate from synth".
  std::string dataset;

  SynthConfig synth{};
  int train_pages = 40;
  int test_pages = 10;

  BinarizeParams binarize{};
  SamplerConfig sampler{};
  fcn::NetworkConfig network{};
  Precision precision = Precision::kFloat;

  double lr = 0.01;
  double momentum = 0.9;
  int steps = 2000;
  int batch = 1;
  int checkpoint_every = 250;

  InferenceConfig inference{};
  Averaging eval_mode = Averaging::kMicro;

  ModelMeta model_meta() const {
    return {sampler.kind == SamplerKind::kBinarizedCrop ? InputMode::kBinarized : InputMode::kColor, binarize};
  }

  fcn::TrainConfig train_config() const {
    fcn::TrainConfig t;
    t.steps = steps;
    t.batch = batch;
    t.lr = lr;
    t.momentum = momentum;
    t.threads = threads;
    t.seed = seed;
    return t;
  }
};

/// Every violated constraint, one message each; empty when valid.
inline std::vector<std::string> validation_errors(const RunConfig& c) {
  std::vector<std::string> errs;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  check(c.threads >= 1, "threads must be >= 1");
  check(c.dataset.empty() || std::filesystem::exists(std::filesystem::path(c.dataset) / "manifest.json"),
        "dataset '" + c.dataset + "' has no manifest.json");
  check(c.train_pages >= 0 && c.test_pages >= 0, "page counts must be >= 0");

  const auto& s = c.synth;
  check(s.height >= 512 && s.width >= 512, "synth.height and synth.width must be >= 512");
  check(s.line_pitch > s.glyph_height && s.glyph_height >= 4, "synth.line_pitch must exceed synth.glyph_height >= 4");
  check(s.annotations >= 0, "synth.annotations must be >= 0");
  check(s.rule_prob >= 0 && s.rule_prob <= 1, "synth.rule_prob must be in [0, 1]");
  check(s.script_prob >= 0 && s.script_prob <= 1, "synth.script_prob must be in [0, 1]");
  check(s.underline_prob >= 0 && s.underline_prob <= 1, "synth.underline_prob must be in [0, 1]");
  check(s.stroke_min > 0 && s.stroke_min <= s.stroke_max, "synth stroke widths must satisfy 0 < min <= max");
  check(0 <= s.print_ink_min && s.print_ink_min <= s.print_ink_max && s.print_ink_max < s.paper_min &&
            s.paper_min <= s.paper_max && s.paper_max <= 255,
        "synth intensities must satisfy 0 <= print_ink_min <= print_ink_max < paper_min <= paper_max <= 255");
  check(s.min_annotation_frac >= 0 && s.min_annotation_frac <= s.max_annotation_frac && s.max_annotation_frac <= 1,
        "synth annotation fraction band must satisfy 0 <= min <= max <= 1");

  check(c.binarize.window >= 3 && c.binarize.window % 2 == 1, "binarize.window must be odd and >= 3");

  const auto& in = c.sampler.inception;
  check(c.sampler.patch >= fcn::kInputMultiple && c.sampler.patch % fcn::kInputMultiple == 0,
        "sampler.patch must be a positive multiple of 32");
  check(in.min_area_frac > 0 && in.min_area_frac <= in.max_area_frac && in.max_area_frac <= 1,
        "sampler area fractions must satisfy 0 < min <= max <= 1");
  check(in.min_aspect > 0 && in.min_aspect <= in.max_aspect, "sampler aspects must satisfy 0 < min <= max");
  check(in.max_attempts >= 1, "sampler.max_attempts must be >= 1");

  for (int i = 0; i < fcn::kNumStacks; ++i) {
    check(c.network.stacks[i].width >= 1, "network.widths[" + std::to_string(i) + "] must be >= 1");
    check(c.network.stacks[i].convs >= 1, "network.convs_per_stack must be >= 1");
  }
  check(c.network.num_classes == kEvalClasses, "network.num_classes must be 2");

  check(c.lr > 0, "optimizer.lr must be > 0");
  check(c.momentum >= 0 && c.momentum < 1, "optimizer.momentum must be in [0, 1)");
  check(c.steps >= 0, "optimizer.steps must be >= 0");
  check(c.batch >= 1, "optimizer.batch must be >= 1");
  check(c.checkpoint_every >= 1, "optimizer.checkpoint_every must be >= 1");

  check(c.inference.patch >= fcn::kInputMultiple && c.inference.patch % fcn::kInputMultiple == 0,
        "inference.patch must be a positive multiple of 32");
  check(c.inference.overlap >= 0 && c.inference.overlap < c.inference.patch, "inference.overlap must be in [0, patch)");
  return errs;
}

inline void validate(const RunConfig& c) {
  const auto errs = validation_errors(c);
  if (errs.empty()) return;
  std::ostringstream oss;
  oss << "invalid configuration (" << errs.size() << " problem" << (errs.size() == 1 ? "" : "s") << "):";
  for (const auto& e : errs) oss << "\n  - " << e;
  throw ValidationError(oss.str());
}

namespace detail {

using nlohmann::json;

// Reads `key` into `out` if present; records a message on type errors.
template <typename V>
void read(const json& obj, const char* key, V& out, const std::string& where, std::vector<std::string>& errs) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception&) {
    errs.push_back(where + key + " has the wrong type");
  }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where,
                           std::vector<std::string>& errs) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) errs.push_back("unknown key " + where + k);
  }
}

inline const json& section(const json& root, const char* key, std::vector<std::string>& errs) {
  static const json empty = json::object();
  if (!root.contains(key)) return empty;
  if (!root.at(key).is_object()) {
    errs.push_back(std::string(key) + " must be an object");
    return empty;
  }
  return root.at(key);
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  std::vector<std::string> errs;
  RunConfig c;
  if (!j.is_object()) throw ValidationError("config document must be a JSON object");
  detail::reject_unknown(j, {"seed", "threads", "dataset", "synth", "binarize", "sampler", "network", "optimizer", "inference", "eval"},
                         "", errs);
  read(j, "seed", c.seed, "", errs);
  read(j, "threads", c.threads, "", errs);
  read(j, "dataset", c.dataset, "", errs);

  const auto& s = detail::section(j, "synth", errs);
  detail::reject_unknown(s, {"height", "width", "line_pitch", "glyph_height", "rule_prob", "script_prob", "print_ink_min",
                             "print_ink_max", "annotations", "underline_prob", "stroke_min", "stroke_max", "jitter",
                             "hull_margin", "paper_min", "paper_max", "noise_sigma", "min_annotation_frac",
                             "max_annotation_frac", "train_pages", "test_pages"},
                         "synth.", errs);
  read(s, "height", c.synth.height, "synth.", errs);
  read(s, "width", c.synth.width, "synth.", errs);
  read(s, "line_pitch", c.synth.line_pitch, "synth.", errs);
  read(s, "glyph_height", c.synth.glyph_height, "synth.", errs);
  read(s, "rule_prob", c.synth.rule_prob, "synth.", errs);
  read(s, "script_prob", c.synth.script_prob, "synth.", errs);
  read(s, "print_ink_min", c.synth.print_ink_min, "synth.", errs);
  read(s, "print_ink_max", c.synth.print_ink_max, "synth.", errs);
  read(s, "annotations", c.synth.annotations, "synth.", errs);
  read(s, "underline_prob", c.synth.underline_prob, "synth.", errs);
  read(s, "stroke_min", c.synth.stroke_min, "synth.", errs);
  read(s, "stroke_max", c.synth.stroke_max, "synth.", errs);
  read(s, "jitter", c.synth.jitter, "synth.", errs);
  read(s, "hull_margin", c.synth.hull_margin, "synth.", errs);
  read(s, "paper_min", c.synth.paper_min, "synth.", errs);
  read(s, "paper_max", c.synth.paper_max, "synth.", errs);
  read(s, "noise_sigma", c.synth.noise_sigma, "synth.", errs);
  read(s, "min_annotation_frac", c.synth.min_annotation_frac, "synth.", errs);
  read(s, "max_annotation_frac", c.synth.max_annotation_frac, "synth.", errs);
  read(s, "train_pages", c.train_pages, "synth.", errs);
  read(s, "test_pages", c.test_pages, "synth.", errs);

  const auto& b = detail::section(j, "binarize", errs);
  detail::reject_unknown(b, {"window", "offset"}, "binarize.", errs);
  read(b, "window", c.binarize.window, "binarize.", errs);
  read(b, "offset", c.binarize.offset, "binarize.", errs);
  c.synth.binarize = c.binarize;

  const auto& sa = detail::section(j, "sampler", errs);
  detail::reject_unknown(sa, {"kind", "patch", "min_area_frac", "max_area_frac", "min_aspect", "max_aspect", "max_attempts"},
                         "sampler.", errs);
  if (sa.contains("kind")) {
    const auto kind = sa.at("kind").is_string() ? sa.at("kind").get<std::string>() : std::string();
    if (kind == "random-crop") c.sampler.kind = SamplerKind::kRandomCrop;
    else if (kind == "inception") c.sampler.kind = SamplerKind::kInception;
    else if (kind == "binarized-crop") c.sampler.kind = SamplerKind::kBinarizedCrop;
    else errs.push_back("sampler.kind must be one of random-crop, inception, binarized-crop");
  }
  read(sa, "patch", c.sampler.patch, "sampler.", errs);
  read(sa, "min_area_frac", c.sampler.inception.min_area_frac, "sampler.", errs);
  read(sa, "max_area_frac", c.sampler.inception.max_area_frac, "sampler.", errs);
  read(sa, "min_aspect", c.sampler.inception.min_aspect, "sampler.", errs);
  read(sa, "max_aspect", c.sampler.inception.max_aspect, "sampler.", errs);
  read(sa, "max_attempts", c.sampler.inception.max_attempts, "sampler.", errs);
  c.sampler.inception.out_size = c.sampler.patch;

  const auto& n = detail::section(j, "network", errs);
  detail::reject_unknown(n, {"widths", "convs_per_stack", "precision"}, "network.", errs);
  std::vector<int> widths;
  for (const auto& st : c.network.stacks) widths.push_back(st.width);
  int convs = c.network.stacks[0].convs;
  read(n, "widths", widths, "network.", errs);
  read(n, "convs_per_stack", convs, "network.", errs);
  if (widths.size() != fcn::kNumStacks) {
    errs.push_back("network.widths must list exactly 5 stack widths");
  } else {
    for (int i = 0; i < fcn::kNumStacks; ++i) c.network.stacks[i] = {convs, widths[i]};
  }
  if (n.contains("precision")) {
    const auto p = n.at("precision").is_string() ? n.at("precision").get<std::string>() : std::string();
    if (p == "float") c.precision = Precision::kFloat;
    else if (p == "double") c.precision = Precision::kDouble;
    else errs.push_back("network.precision must be float or double");
  }

  const auto& o = detail::section(j, "optimizer", errs);
  detail::reject_unknown(o, {"lr", "momentum", "steps", "batch", "checkpoint_every"}, "optimizer.", errs);
  read(o, "lr", c.lr, "optimizer.", errs);
  read(o, "momentum", c.momentum, "optimizer.", errs);
  read(o, "steps", c.steps, "optimizer.", errs);
  read(o, "batch", c.batch, "optimizer.", errs);
  read(o, "checkpoint_every", c.checkpoint_every, "optimizer.", errs);

  const auto& inf = detail::section(j, "inference", errs);
  detail::reject_unknown(inf, {"patch", "overlap"}, "inference.", errs);
  read(inf, "patch", c.inference.patch, "inference.", errs);
  read(inf, "overlap", c.inference.overlap, "inference.", errs);

  const auto& e = detail::section(j, "eval", errs);
  detail::reject_unknown(e, {"mode"}, "eval.", errs);
  if (e.contains("mode")) {
    const auto m = e.at("mode").is_string() ? e.at("mode").get<std::string>() : std::string();
    if (m == "micro") c.eval_mode = Averaging::kMicro;
    else if (m == "macro") c.eval_mode = Averaging::kMacro;
    else errs.push_back("eval.mode must be micro or macro");
  }

  for (auto& msg : validation_errors(c)) errs.push_back(std::move(msg));
  if (!errs.empty()) {
    std::ostringstream oss;
    oss << "invalid configuration (" << errs.size() << " problem" << (errs.size() == 1 ? "" : "s") << "):";
    for (const auto& m : errs) oss << "\n  - " << m;
    throw ValidationError(oss.str());
  }
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  if (!c.dataset.empty()) j["dataset"] = c.dataset;
  const auto& s = c.synth;
  j["synth"] = {{"height", s.height},
                {"width", s.width},
                {"line_pitch", s.line_pitch},
                {"glyph_height", s.glyph_height},
                {"rule_prob", s.rule_prob},
                {"script_prob", s.script_prob},
                {"print_ink_min", s.print_ink_min},
                {"print_ink_max", s.print_ink_max},
                {"annotations", s.annotations},
                {"underline_prob", s.underline_prob},
                {"stroke_min", s.stroke_min},
                {"stroke_max", s.stroke_max},
                {"jitter", s.jitter},
                {"hull_margin", s.hull_margin},
                {"paper_min", s.paper_min},
                {"paper_max", s.paper_max},
                {"noise_sigma", s.noise_sigma},
                {"min_annotation_frac", s.min_annotation_frac},
                {"max_annotation_frac", s.max_annotation_frac},
                {"train_pages", c.train_pages},
                {"test_pages", c.test_pages}};
  j["binarize"] = {{"window", c.binarize.window}, {"offset", c.binarize.offset}};
  const auto& in = c.sampler.inception;
  j["sampler"] = {{"kind", to_string(c.sampler.kind)}, {"patch", c.sampler.patch},
                  {"min_area_frac", in.min_area_frac}, {"max_area_frac", in.max_area_frac},
                  {"min_aspect", in.min_aspect},       {"max_aspect", in.max_aspect},
                  {"max_attempts", in.max_attempts}};
  std::vector<int> widths;
  for (const auto& st : c.network.stacks) widths.push_back(st.width);
  j["network"] = {{"widths", widths},
                  {"convs_per_stack", c.network.stacks[0].convs},
                  {"precision", c.precision == Precision::kFloat ? "float" : "double"}};
  j["optimizer"] = {{"lr", c.lr}, {"momentum", c.momentum}, {"steps", c.steps}, {"batch", c.batch},
                    {"checkpoint_every", c.checkpoint_every}};
  j["inference"] = {{"patch", c.inference.patch}, {"overlap", c.inference.overlap}};
  j["eval"] = {{"mode", c.eval_mode == Averaging::kMicro ? "micro" : "macro"}};
  return j;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace annoseg
