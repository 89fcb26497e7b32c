#pragma once

// Workflow glue shared by the CLI and the end-to-end tests: dataset layout
// on disk, sampler construction, training, page prediction and reports.
//
// Dataset layout written by write_synth_dataset:
//   <root>/manifest.json
//   <root>/{train,test}/images/page_NNN.png   page image (RGB)
//   <root>/{train,test}/page/page_NNN.xml     PAGE ground truth
//   <root>/{train,test}/labels/page_NNN.png   color-coded label map

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "annoseg/augment.hpp"
#include "annoseg/config.hpp"
#include "annoseg/eval.hpp"
#include "annoseg/fcn/network.hpp"
#include "annoseg/fcn/train.hpp"
#include "annoseg/infer.hpp"
#include "annoseg/model.hpp"
#include "annoseg/page_gt.hpp"
#include "annoseg/parallel.hpp"
#include "annoseg/png.hpp"
#include "annoseg/synth.hpp"

namespace annoseg {

namespace fs = std::filesystem;

/// Independent generator for item `index` of stream `stream`, so pages can
/// be produced in any order or in parallel.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

inline std::string page_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "page_%03d", i);
  return buf;
}

struct SynthSplit {
  std::vector<SynthPage> train;
  std::vector<SynthPage> test;
};

inline SynthSplit generate_split(const SynthConfig& cfg, int train, int test, std::uint64_t seed, int threads = 1) {
  SynthSplit split;
  split.train.resize(static_cast<std::size_t>(train));
  split.test.resize(static_cast<std::size_t>(test));
  parallel_for(static_cast<std::size_t>(train + test), threads, [&](std::size_t i) {
    const bool is_train = i < static_cast<std::size_t>(train);
    const std::size_t k = is_train ? i : i - static_cast<std::size_t>(train);
    Rng rng = derived_rng(seed, is_train ? 0 : 1, k);
    (is_train ? split.train : split.test)[k] = generate_page(cfg, rng);
  });
  return split;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes the split to disk and returns the manifest.
inline nlohmann::json write_synth_dataset(const SynthSplit& split, const fs::path& root) {
  nlohmann::json manifest = {{"format", "annoseg-dataset/1"},
                             {"train", nlohmann::json::array()},
                             {"test", nlohmann::json::array()}};
  auto emit = [&](const std::vector<SynthPage>& pages, const std::string& name) {
    const fs::path dir = root / name;
    for (const char* sub : {"images", "page", "labels"}) fs::create_directories(dir / sub);
    for (std::size_t i = 0; i < pages.size(); ++i) {
      const std::string stem = page_name(static_cast<int>(i));
      write_png(dir / "images" / (stem + ".png"), pages[i].image);
      write_text(dir / "page" / (stem + ".xml"), write_page_xml(pages[i].gt, stem + ".png"));
      write_png(dir / "labels" / (stem + ".png"), encode_label_png(pages[i].labels));
      manifest[name].push_back({{"name", stem},
                                {"image", name + "/images/" + stem + ".png"},
                                {"page", name + "/page/" + stem + ".xml"},
                                {"labels", name + "/labels/" + stem + ".png"}});
    }
  };
  fs::create_directories(root);
  emit(split.train, "train");
  emit(split.test, "test");
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

/// Sorted *.png files directly inside `dir`.
inline std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

struct LabeledPage {
  std::string name;
  RasterImage image;
  LabelMap labels;
};

/// Loads the (image, label) pairs of one split listed in the manifest.
inline std::vector<LabeledPage> load_split(const fs::path& root, const std::string& split) {
  const auto manifest = nlohmann::json::parse(read_text(root / "manifest.json"));
  require<ParseError>(manifest.contains(split), "manifest has no '", split, "' split");
  std::vector<LabeledPage> pages;
  for (const auto& entry : manifest.at(split)) {
    LabeledPage p;
    p.name = entry.at("name").get<std::string>();
    p.image = read_png(root / entry.at("image").get<std::string>());
    p.labels = decode_label_png(read_png(root / entry.at("labels").get<std::string>()));
    require<ParseError>(p.image.height() == p.labels.height() && p.image.width() == p.labels.width(), "page ", p.name,
                        ": image and label dims differ");
    pages.push_back(std::move(p));
  }
  return pages;
}

inline fcn::PatchSampler make_sampler(const SamplerConfig& cfg) {
  switch (cfg.kind) {
    case SamplerKind::kInception: {
      InceptionSamplerConfig ic = cfg.inception;
      ic.out_size = cfg.patch;
      return [ic](const RasterImage& img, const LabelMap& lm, Rng& rng) { return sample_inception(img, lm, ic, rng); };
    }
    case SamplerKind::kRandomCrop:
    case SamplerKind::kBinarizedCrop: {
      const int size = cfg.patch;
      return [size](const RasterImage& img, const LabelMap& lm, Rng& rng) {
        return sample_random_crop(img, lm, size, rng);
      };
    }
  }
  throw ValidationError("unknown sampler kind");
}

/// Network inputs for training: pages are binarized up front for the
/// binarized-crop strategy, so the sampler only crops.
inline std::vector<fcn::TrainingPage> training_pages(const std::vector<std::pair<RasterImage, LabelMap>>& pages,
                                                     const ModelMeta& meta) {
  std::vector<fcn::TrainingPage> out;
  out.reserve(pages.size());
  for (const auto& [img, lm] : pages) out.push_back({prepare_input(img, meta), lm});
  return out;
}

template <typename T>
struct TrainedModel {
  fcn::Fcn8sParams<T> params;
  ModelMeta meta;
  std::vector<double> loss_history;
};

template <typename T>
using StepCallback = std::function<void(int, double, const fcn::Fcn8sParams<T>&)>;

/// Initializes from the run seed and trains on the given pages.
template <typename T>
TrainedModel<T> train_model(const RunConfig& cfg, const std::vector<std::pair<RasterImage, LabelMap>>& pages,
                            const StepCallback<T>& on_step = {}) {
  validate(cfg);
  TrainedModel<T> model{fcn::init_params<T>(cfg.network, cfg.seed), cfg.model_meta(), {}};
  const auto inputs = training_pages(pages, model.meta);
  const auto sampler = make_sampler(cfg.sampler);
  auto tc = cfg.train_config();
  tc.seed = cfg.seed + 1;
  model.loss_history = fcn::train<T>(model.params, inputs, sampler, tc, on_step).loss_history;
  return model;
}

struct PagePrediction {
  ProbabilityMap probabilities;
  LabelMap labels;
};

template <typename T>
PagePrediction predict_page(const fcn::Fcn8sParams<T>& params, const ModelMeta& meta, const RasterImage& page,
                            const InferenceConfig& cfg, int threads = 1) {
  auto pm = predict_tiled(params, prepare_input(page, meta), cfg, threads);
  auto lm = argmax_labels(pm);
  return {std::move(pm), std::move(lm)};
}

/// Writes one 16-bit PNG per class, probability scaled to [0, 65535].
inline void write_probability_pngs(const ProbabilityMap& pm, const fs::path& dir, const std::string& stem) {
  for (int c = 0; c < pm.classes(); ++c) {
    std::vector<std::uint16_t> plane(static_cast<std::size_t>(pm.height()) * pm.width());
    for (int y = 0; y < pm.height(); ++y)
      for (int x = 0; x < pm.width(); ++x)
        plane[static_cast<std::size_t>(y) * pm.width() + x] =
            static_cast<std::uint16_t>(std::lround(std::clamp(pm.at(c, y, x), 0.0, 1.0) * 65535.0));
    write_png16(dir / (stem + "_c" + std::to_string(c) + ".png"), pm.height(), pm.width(), plane);
  }
}

inline const char* class_name(int c) { return c == kBackground ? "background" : "annotation"; }

inline nlohmann::json report_to_json(const EvalReport& rep, const std::vector<std::string>& names = {},
                                     const std::vector<double>& page_mean_iou = {}) {
  nlohmann::json j;
  j["mode"] = rep.mode == Averaging::kMicro ? "micro" : "macro";
  j["pages"] = rep.pages;
  j["mean_iou"] = rep.mean_iou;
  j["per_class_iou"] = nlohmann::json::object();
  j["absent_classes"] = nlohmann::json::array();
  for (int c = 0; c < static_cast<int>(rep.per_class_iou.size()); ++c) {
    j["per_class_iou"][class_name(c)] = rep.per_class_iou[c];
    if (rep.absent[c]) j["absent_classes"].push_back(class_name(c));
  }
  j["confusion"] = nlohmann::json::array();
  for (int i = 0; i < rep.confusion.classes(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < rep.confusion.classes(); ++k) row.push_back(rep.confusion.at(i, k));
    j["confusion"].push_back(row);
  }
  j["evaluated_pixels"] = rep.confusion.total();
  j["ambiguous_pixels"] = rep.confusion.ambiguous;
  j["total_pixels"] = rep.total_pixels;
  if (!names.empty()) {
    j["per_page"] = nlohmann::json::array();
    for (std::size_t i = 0; i < names.size(); ++i)
      j["per_page"].push_back({{"name", names[i]}, {"mean_iou", i < page_mean_iou.size() ? page_mean_iou[i] : 0.0}});
  }
  return j;
}

}  // namespace annoseg
