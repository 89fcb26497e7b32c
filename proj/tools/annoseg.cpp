// annoseg: dataset preparation, training, inference and evaluation.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "annoseg/config.hpp"
#include "annoseg/fcn/checkpoint.hpp"
#include "annoseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace annoseg;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  validate(c);
  return c;
}

void log(const std::string& msg) { std::cerr << "annoseg: " << msg << "\n"; }

std::map<std::string, fs::path> by_stem(const fs::path& dir, const std::string& ext) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out[e.path().stem().string()] = e.path();
  return out;
}

// --- gt-rasterize -----------------------------------------------------------

struct RasterizeArgs {
  std::string xml_dir, image_dir, out_dir;
};

int cmd_gt_rasterize(const Globals& g, const RasterizeArgs& a) {
  const RunConfig cfg = resolve_config(g);
  const auto xmls = by_stem(a.xml_dir, ".xml");
  const auto images = by_stem(a.image_dir, ".png");
  std::vector<std::string> unpaired;
  for (const auto& [stem, p] : xmls)
    if (!images.count(stem)) unpaired.push_back(p.string() + " has no image");
  for (const auto& [stem, p] : images)
    if (!xmls.count(stem)) unpaired.push_back(p.string() + " has no PAGE XML");
  if (!unpaired.empty()) {
    std::string msg = "unpaired inputs:";
    for (const auto& u : unpaired) msg += "\n  - " + u;
    throw ValidationError(msg);
  }
  if (xmls.empty()) log("warning: no PAGE XML files in " + a.xml_dir);

  fs::create_directories(a.out_dir);
  json summary = {{"pages", json::array()}};
  std::uint64_t totals[kNumLabels] = {0, 0, 0};
  for (const auto& [stem, xml_path] : xmls) {
    const RasterImage img = read_png(images.at(stem));
    const PageGroundTruth gt = parse_page_xml(read_text(xml_path));
    if (gt.page_height != img.height() || gt.page_width != img.width())
      throw ValidationError(detail::concat("pair '", stem, "': PAGE XML says ", gt.page_height, "x", gt.page_width,
                                           ", image is ", img.height(), "x", img.width()));
    const LabelMap lm = rasterize_gt(img, gt, cfg.binarize);
    write_png(fs::path(a.out_dir) / (stem + ".png"), encode_label_png(lm));
    std::uint64_t counts[kNumLabels] = {0, 0, 0};
    for (auto v : lm.data()) ++counts[v];
    for (int k = 0; k < kNumLabels; ++k) totals[k] += counts[k];
    summary["pages"].push_back({{"name", stem},
                                {"background", counts[kBackground]},
                                {"annotation", counts[kAnnotation]},
                                {"ambiguous", counts[kAmbiguous]},
                                {"skipped_regions", gt.skipped_regions},
                                {"clamped_vertices", gt.clamped_vertices}});
  }
  summary["total"] = {{"background", totals[kBackground]},
                      {"annotation", totals[kAnnotation]},
                      {"ambiguous", totals[kAmbiguous]}};
  write_text(fs::path(a.out_dir) / "summary.json", summary.dump(2) + "\n");
  std::printf("pages %zu  background %llu  annotation %llu  ambiguous %llu\n", xmls.size(),
              static_cast<unsigned long long>(totals[kBackground]), static_cast<unsigned long long>(totals[kAnnotation]),
              static_cast<unsigned long long>(totals[kAmbiguous]));
  return 0;
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::optional<int> train, test;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  RunConfig cfg = resolve_config(g);
  if (a.train) cfg.train_pages = *a.train;
  if (a.test) cfg.test_pages = *a.test;
  validate(cfg);
  const auto split = generate_split(cfg.synth, cfg.train_pages, cfg.test_pages, cfg.seed, cfg.threads);
  write_synth_dataset(split, a.out_dir);
  std::printf("wrote %d train + %d test pages to %s\n", cfg.train_pages, cfg.test_pages, a.out_dir.c_str());
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data, out_dir;
  std::optional<int> steps;
  std::optional<std::string> sampler;
};

std::vector<std::pair<RasterImage, LabelMap>> training_data(const RunConfig& cfg) {
  std::vector<std::pair<RasterImage, LabelMap>> pages;
  if (!cfg.dataset.empty()) {
    for (auto& p : load_split(cfg.dataset, "train")) pages.emplace_back(std::move(p.image), std::move(p.labels));
  } else {
    auto split = generate_split(cfg.synth, cfg.train_pages, 0, cfg.seed, cfg.threads);
    for (auto& p : split.train) pages.emplace_back(std::move(p.image), std::move(p.labels));
  }
  if (pages.empty()) throw ValidationError("no training pages");
  return pages;
}

template <typename T>
int run_training(const RunConfig& cfg, const fs::path& out) {
  const auto pages = training_data(cfg);
  const fs::path ckpt = out / "model.ckpt";
  std::ofstream loss_log(out / "loss.tsv", std::ios::trunc);
  loss_log << "step\tloss\n";
  const ModelMeta meta = cfg.model_meta();
  try {
    auto model = train_model<T>(cfg, pages, [&](int step, double loss, const fcn::Fcn8sParams<T>& p) {
      loss_log << step << '\t' << loss << '\n';
      if ((step + 1) % cfg.checkpoint_every == 0) {
        loss_log.flush();
        fcn::save_checkpoint(ckpt, p, meta);
      }
    });
    fcn::save_checkpoint(ckpt, model.params, model.meta);
    const double last = model.loss_history.empty() ? 0.0 : model.loss_history.back();
    std::printf("trained %d steps, final loss %.6f, checkpoint %s\n", cfg.steps, last, ckpt.c_str());
  } catch (const fcn::TrainingDiverged& e) {
    loss_log.flush();
    log(std::string(e.what()) + (fs::exists(ckpt) ? "; last good checkpoint kept at " + ckpt.string()
                                                  : "; no checkpoint had been written yet"));
    return 2;
  }
  return 0;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (!a.data.empty()) cfg.dataset = a.data;
  if (a.steps) cfg.steps = *a.steps;
  if (a.sampler) {
    auto j = config_to_json(cfg);
    j["sampler"]["kind"] = *a.sampler;
    cfg = config_from_json(j);
  }
  validate(cfg);
  fs::create_directories(a.out_dir);
  write_text(fs::path(a.out_dir) / "run_config.json", config_to_json(cfg).dump(2) + "\n");
  return cfg.precision == Precision::kDouble ? run_training<double>(cfg, a.out_dir)
                                             : run_training<float>(cfg, a.out_dir);
}

// --- infer ------------------------------------------------------------------

struct InferArgs {
  std::string model, input, out_dir;
  bool prob = false;
};

template <typename T>
int run_inference(const RunConfig& cfg, const InferArgs& a) {
  const auto ck = fcn::load_checkpoint<T>(a.model);
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.input)) inputs = list_pngs(a.input);
  else if (fs::is_regular_file(a.input)) inputs.push_back(a.input);
  else throw ValidationError("input not found: " + a.input);
  if (inputs.empty()) log("warning: no PNG images in " + a.input);
  fs::create_directories(a.out_dir);
  for (const auto& path : inputs) {
    const RasterImage img = read_png(path);
    const auto pred = predict_page(ck.params, ck.meta, img, cfg.inference, cfg.threads);
    const std::string stem = path.stem().string();
    write_png(fs::path(a.out_dir) / (stem + ".png"), encode_label_png(pred.labels));
    if (a.prob) write_probability_pngs(pred.probabilities, a.out_dir, stem);
    std::printf("%s: %d tiles\n", stem.c_str(), static_cast<int>(tile_plan(img.height(), img.width(), cfg.inference).size()));
  }
  return 0;
}

int cmd_infer(const Globals& g, const InferArgs& a) {
  const RunConfig cfg = resolve_config(g);
  return cfg.precision == Precision::kDouble ? run_inference<double>(cfg, a) : run_inference<float>(cfg, a);
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string pred_dir, gt_dir, out_dir;
  std::optional<std::string> mode;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  RunConfig cfg = resolve_config(g);
  if (a.mode) {
    if (*a.mode == "micro") cfg.eval_mode = Averaging::kMicro;
    else if (*a.mode == "macro") cfg.eval_mode = Averaging::kMacro;
    else throw ValidationError("--mode must be micro or macro");
  }
  const auto gts = by_stem(a.gt_dir, ".png");
  const auto preds = by_stem(a.pred_dir, ".png");
  std::vector<std::string> names;
  std::vector<LabelMap> pred_maps, gt_maps;
  for (const auto& [stem, gt_path] : gts) {
    if (!preds.count(stem)) throw ValidationError("no prediction for ground truth page '" + stem + "'");
    names.push_back(stem);
    gt_maps.push_back(decode_label_png(read_png(gt_path)));
    pred_maps.push_back(decode_label_png(read_png(preds.at(stem))));
  }
  const EvalReport rep = evaluate(pred_maps, gt_maps, cfg.eval_mode);
  std::vector<double> page_iou;
  for (std::size_t i = 0; i < names.size(); ++i) page_iou.push_back(mean_iou(accumulate_confusion(pred_maps[i], gt_maps[i])));
  const json j = report_to_json(rep, names, page_iou);
  if (!a.out_dir.empty()) {
    fs::create_directories(fs::path(a.out_dir) / "diff");
    write_text(fs::path(a.out_dir) / "report.json", j.dump(2) + "\n");
    for (std::size_t i = 0; i < names.size(); ++i)
      write_png(fs::path(a.out_dir) / "diff" / (names[i] + ".png"), render_diff(pred_maps[i], gt_maps[i]));
  }
  std::printf("pages %zu (%s)\n", rep.pages, rep.mode == Averaging::kMicro ? "micro" : "macro");
  for (int c = 0; c < kEvalClasses; ++c)
    std::printf("  %-10s IoU %.4f%s\n", class_name(c), rep.per_class_iou[c], rep.absent[c] ? " (absent)" : "");
  std::printf("  mean       IoU %.4f\n", rep.mean_iou);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-level handwritten annotation segmentation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the configured seed");
  app.add_option("--threads", g.threads, "maximum worker threads");

  RasterizeArgs ra;
  auto* rast = app.add_subcommand("gt-rasterize", "PAGE XML + images -> color-coded label PNGs");
  rast->add_option("--xml", ra.xml_dir, "directory of PAGE XML files")->required();
  rast->add_option("--images", ra.image_dir, "directory of page PNGs (same stems)")->required();
  rast->add_option("--out", ra.out_dir, "output directory")->required();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", sa.out_dir, "dataset root")->required();
  synth->add_option("--train", sa.train, "training pages");
  synth->add_option("--test", sa.test, "test pages");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", ta.data, "dataset root (default: synthesize from config)");
  train->add_option("--out", ta.out_dir, "output directory for checkpoint and loss log")->required();
  train->add_option("--steps", ta.steps, "override optimizer.steps");
  train->add_option("--sampler", ta.sampler, "random-crop, inception or binarized-crop");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "tiled inference");
  infer->add_option("--model", ia.model, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--input", ia.input, "page PNG or directory of PNGs")->required();
  infer->add_option("--out", ia.out_dir, "output directory")->required();
  infer->add_flag("--prob", ia.prob, "also write 16-bit per-class probability PNGs");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "compare predicted and ground truth label PNGs");
  eval->add_option("--pred", ea.pred_dir, "predicted label PNGs")->required();
  eval->add_option("--gt", ea.gt_dir, "ground truth label PNGs")->required();
  eval->add_option("--out", ea.out_dir, "directory for report.json and diff images");
  eval->add_option("--mode", ea.mode, "micro or macro");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*rast) return cmd_gt_rasterize(g, ra);
    if (*synth) return cmd_synth(g, sa);
    if (*train) return cmd_train(g, ta);
    if (*infer) return cmd_infer(g, ia);
    if (*eval) return cmd_eval(g, ea);
  } catch (const std::invalid_argument& e) {
    log(e.what());
    return 1;
  } catch (const ParseError& e) {
    log(e.what());
    return 1;
  } catch (const std::exception& e) {
    log(e.what());
    return 2;
  }
  return 1;
}
