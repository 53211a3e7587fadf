// catv2ton command-line front end.
#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "catv2ton/clipstream.hpp"
#include "catv2ton/dataprep.hpp"
#include "catv2ton/io.hpp"
#include "catv2ton/metrics.hpp"
#include "catv2ton/trainer.hpp"

using namespace catv2ton;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_event(const std::string& event, json fields = json::object()) {
  json line;
  line["event"] = event;
  for (auto& [k, v] : fields.items()) line[k] = v;
  std::cerr << line.dump() << '\n';
}

void write_run(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
               const json& resolved) {
  json run;
  run["command"] = command;
  run["argv"] = argv;
  run["resolved"] = resolved;
  write_text(dir / "run.json", run.dump(2) + "\n");
}

json model_config_json(const ModelConfig& cfg) { return json::parse(cfg.to_json()); }

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

int run_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  const Manifest m = make_synthetic_dataset(a.out, a.cfg);
  json resolved{{"out", a.out},       {"seed", a.cfg.seed},     {"videos", a.cfg.videos},
                {"images", a.cfg.images}, {"frames", a.cfg.frames}, {"height", a.cfg.height},
                {"width", a.cfg.width}, {"patch", a.cfg.patch}};
  write_run(a.out, "synth", argv, resolved);
  log_event("synth_done", {{"samples", m.samples.size()}, {"out", a.out}});
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string init;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  const std::string text = read_text(a.config);
  const TrainConfig cfg = TrainConfig::from_json(text);
  const auto j = nlohmann::json::parse(text);
  ModelConfig mcfg;
  if (j.contains("model")) mcfg = ModelConfig::from_json(j.at("model").dump());
  std::string data = a.data, out = a.out;
  if (data.empty() && j.contains("dataset")) data = j.at("dataset").get<std::string>();
  if (out.empty() && j.contains("output")) out = j.at("output").get<std::string>();
  if (data.empty() || out.empty()) throw UsageError("train: dataset and output directories are required");
  fs::create_directories(out);

  DiTModel<float> model = a.init.empty() ? DiTModel<float>(mcfg, cfg.seed) : load_checkpoint(a.init);
  const auto dataset = load_dataset(data);
  json resolved;
  resolved["train"] = json::parse(cfg.to_json());
  resolved["model"] = model_config_json(model.config());
  resolved["dataset"] = data;
  resolved["output"] = out;
  resolved["init"] = a.init;
  resolved["seed"] = cfg.seed;
  write_run(out, "train", argv, resolved);

  std::ofstream csv(fs::path(out) / "loss.csv", std::ios::trunc);
  std::ofstream jlog(fs::path(out) / "log.jsonl", std::ios::trunc);
  csv.precision(9);
  csv << "step,loss,grad_norm,lr\n";
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow& r) {
    csv << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.lr << '\n';
    json line{{"event", "step"}, {"step", r.step}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"lr", r.lr}};
    jlog << line.dump() << '\n';
  };
  hooks.on_checkpoint = [&](std::size_t step, const DiTModel<float>& m) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06zu.cvtw", step);
    save_checkpoint(fs::path(out) / name, m);
  };
  const TrainResult result = train(dataset, model, cfg, hooks);
  save_checkpoint(fs::path(out) / "model.cvtw", model);
  json done{{"steps", result.trace.size()},
            {"trainable", result.freeze.trainable},
            {"total", result.freeze.total},
            {"ratio", result.freeze.ratio}};
  if (!result.trace.empty()) {
    done["initial_loss"] = result.trace.front().loss;
    done["final_loss"] = result.trace.back().loss;
  }
  log_event("train_done", done);
  return kExitOk;
}

// ---- tryon ----------------------------------------------------------------

struct TryonArgs {
  std::string person, garment, mask, pose, ckpt, out;
  std::size_t clip_len = 32;
  std::optional<std::size_t> overlap, steps;
  std::optional<double> cfg;
  std::uint64_t seed = 0;
  bool no_adacn = false;
  bool no_pose = false;
};

int run_tryon(const TryonArgs& a, const std::vector<std::string>& argv) {
  const DiTModel<float> model = load_checkpoint(a.ckpt);
  const ModelConfig& mc = model.config();
  LongVideoInputs in;
  in.person = read_frames_or_file(a.person, FrameKind::image);
  in.mask = read_frames_or_file(a.mask, FrameKind::mask);
  in.garment = image_to_frame(read_pnm(a.garment));
  const std::size_t T = in.person.frames();
  if (!a.pose.empty() && !a.no_pose) {
    in.pose = read_frames_or_file(a.pose, FrameKind::tensor);
  } else {
    in.pose = VideoTensor(T, mc.pose_channels, in.person.height(), in.person.width());
  }
  if (in.mask.frames() != T || in.pose.frames() != T) {
    throw DimensionError("tryon: person, mask and pose frame counts differ");
  }

  const SamplerDefaults defaults = sampler_defaults(T);
  LongVideoOptions opt;
  opt.clip_length = a.clip_len;
  opt.overlap = a.overlap.value_or(default_overlap(a.clip_len));
  opt.sampler.steps = a.steps.value_or(defaults.steps);
  opt.sampler.cfg_strength = a.cfg.value_or(defaults.cfg_strength);
  opt.sampler.seed = a.seed;
  opt.sampler.use_pose = true;
  opt.use_adacn = !a.no_adacn;

  json resolved{{"person", a.person},
                {"garment", a.garment},
                {"mask", a.mask},
                {"pose", a.pose},
                {"ckpt", a.ckpt},
                {"out", a.out},
                {"frames", T},
                {"clip_len", opt.clip_length},
                {"overlap", opt.overlap},
                {"steps", opt.sampler.steps},
                {"cfg", opt.sampler.cfg_strength},
                {"seed", opt.sampler.seed},
                {"adacn", opt.use_adacn},
                {"pose_maps", !a.no_pose && !a.pose.empty()},
                {"model", model_config_json(mc)}};
  fs::create_directories(a.out);
  write_run(a.out, "tryon", argv, resolved);
  log_event("tryon_start", resolved);

  const NoiseSchedule schedule = make_schedule();
  const LongVideoResult result = generate_long(model, schedule, in, opt);
  write_frames(a.out, result.video, FrameKind::image);
  log_event("tryon_done", {{"frames", T}, {"windows", result.plan.windows.size()}});
  return kExitOk;
}

// ---- smooth-masks ---------------------------------------------------------

struct SmoothArgs {
  std::string in, out;
  std::vector<std::size_t> kernel{3, 5, 5};
  double threshold = 0.3;
};

int run_smooth(const SmoothArgs& a, const std::vector<std::string>& argv) {
  if (a.kernel.size() != 3) throw UsageError("smooth-masks: --kernel takes three values t,h,w");
  SmoothingConfig cfg{{a.kernel[0], a.kernel[1], a.kernel[2]}, a.threshold};
  const VideoTensor masks = read_frames(a.in, FrameKind::mask);
  const VideoTensor out = smooth_mask_3d(masks, cfg);
  write_frames(a.out, out, FrameKind::mask);
  json resolved{{"in", a.in}, {"out", a.out}, {"kernel", a.kernel}, {"threshold", a.threshold}};
  write_run(a.out, "smooth-masks", argv, resolved);
  json done{{"frames", masks.frames()}};
  if (masks.frames() >= 2) {
    done["flicker_before"] = temporal_flicker(masks);
    done["flicker_after"] = temporal_flicker(out);
  }
  log_event("smooth_done", done);
  return kExitOk;
}

// ---- filter-frontal -------------------------------------------------------

struct FilterArgs {
  std::vector<std::string> labels;
  std::size_t min_run = 24;
  std::string out = ".";
};

int run_filter(const FilterArgs& a, const std::vector<std::string>& argv) {
  json report = json::array();
  for (const auto& path : a.labels) {
    const OrientationTrack track = parse_orientation_labels(read_text(path), fs::path(path).stem().string());
    json segs = json::array();
    for (const auto& s : filter_frontal_runs(track, a.min_run)) segs.push_back({{"start", s.start}, {"length", s.length}});
    report.push_back({{"video", track.video_id}, {"frames", track.labels.size()}, {"segments", segs}});
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "segments.json", report.dump(2) + "\n");
  write_run(a.out, "filter-frontal", argv, {{"labels", a.labels}, {"min_run", a.min_run}, {"out", a.out}});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string dataset, pred_root, out;
  std::string pred, gt, mask, id = "sample";
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  EvalReport report;
  json resolved{{"out", a.out}};
  if (!a.dataset.empty()) {
    if (a.pred_root.empty()) throw UsageError("eval: --dataset requires --pred-root");
    const Manifest m = load_manifest(a.dataset);
    for (const auto& e : m.samples) {
      const TryOnSample s = load_sample(a.dataset, e);
      const VideoTensor pred = read_frames(fs::path(a.pred_root) / e.id, FrameKind::image);
      report.rows.push_back(evaluate_sample(e.id, pred, s.target, s.mask));
    }
    resolved["dataset"] = a.dataset;
    resolved["pred_root"] = a.pred_root;
  } else {
    if (a.pred.empty() || a.gt.empty() || a.mask.empty()) {
      throw UsageError("eval: need --dataset/--pred-root or --pred/--gt/--mask");
    }
    report.rows.push_back(evaluate_sample(a.id, read_frames_or_file(a.pred, FrameKind::image),
                                          read_frames_or_file(a.gt, FrameKind::image),
                                          read_frames_or_file(a.mask, FrameKind::mask)));
    resolved["pred"] = a.pred;
    resolved["gt"] = a.gt;
    resolved["mask"] = a.mask;
  }
  report.config_json = resolved.dump();
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "report.json", report.to_json());
  write_text(fs::path(a.out) / "report.csv", report.to_csv());
  write_run(a.out, "eval", argv, resolved);
  json agg;
  for (const auto& [k, v] : report.aggregate()) agg[k] = std::isfinite(v) ? json(v) : json(std::to_string(v));
  std::cout << agg.dump() << '\n';
  return kExitOk;
}

// ---- inspect-params -------------------------------------------------------

struct InspectArgs {
  std::string mode = "selective";
  std::string model_config;
  std::string out = ".";
};

int run_inspect(const InspectArgs& a, const std::vector<std::string>& argv) {
  ModelConfig cfg;
  if (!a.model_config.empty()) cfg = ModelConfig::from_json(read_text(a.model_config));
  DiTModel<float> model(cfg, 0);
  const FreezeReport r = model.freeze_partition(a.mode == "full" ? FreezeMode::full : FreezeMode::selective);
  json report{{"mode", a.mode}, {"trainable", r.trainable}, {"total", r.total}, {"ratio", r.ratio}};
  fs::create_directories(a.out);
  write_run(a.out, "inspect-params", argv, {{"mode", a.mode}, {"model", model_config_json(cfg)}});
  std::cout << report.dump() << '\n';
  return kExitOk;
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"catv2ton: desk-scale diffusion try-on"};
  app.require_subcommand(1);
  app.footer("Use --replay <run.json> to re-run a recorded command.");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic try-on dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.cfg.seed);
  s->add_option("--videos", synth.cfg.videos);
  s->add_option("--images", synth.cfg.images);
  s->add_option("--frames", synth.cfg.frames);
  s->add_option("--height", synth.cfg.height);
  s->add_option("--width", synth.cfg.width);
  s->add_option("--patch", synth.cfg.patch);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train from a JSON config");
  t->add_option("--config", tr.config, "Training config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset root (overrides config)");
  t->add_option("--out", tr.out, "Output directory (overrides config)");
  t->add_option("--init", tr.init, "Start from this checkpoint");

  TryonArgs ty;
  auto* y = app.add_subcommand("tryon", "Image or video try-on inference");
  y->add_option("--person", ty.person, "Person frame directory or image")->required();
  y->add_option("--garment", ty.garment, "Garment image")->required();
  y->add_option("--mask", ty.mask, "Mask frame directory or image")->required();
  y->add_option("--pose", ty.pose, "Pose map directory or tensor file");
  y->add_option("--ckpt", ty.ckpt, "Checkpoint")->required();
  y->add_option("--out", ty.out, "Output directory")->required();
  y->add_option("--clip-len", ty.clip_len);
  y->add_option("--overlap", ty.overlap);
  y->add_option("--steps", ty.steps);
  y->add_option("--cfg", ty.cfg);
  y->add_option("--seed", ty.seed);
  y->add_flag("--no-adacn", ty.no_adacn);
  y->add_flag("--no-pose", ty.no_pose);

  SmoothArgs sm;
  auto* m = app.add_subcommand("smooth-masks", "3D mask smoothing over a mask directory");
  m->add_option("--in", sm.in)->required();
  m->add_option("--out", sm.out)->required();
  m->add_option("--kernel", sm.kernel)->delimiter(',');
  m->add_option("--threshold", sm.threshold);

  FilterArgs fl;
  auto* f = app.add_subcommand("filter-frontal", "Keep long frontal runs from label files");
  f->add_option("--labels", fl.labels, "Label files")->required();
  f->add_option("--min-run", fl.min_run);
  f->add_option("--out", fl.out);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Metrics of outputs against ground truth");
  e->add_option("--dataset", ev.dataset);
  e->add_option("--pred-root", ev.pred_root);
  e->add_option("--pred", ev.pred);
  e->add_option("--gt", ev.gt);
  e->add_option("--mask", ev.mask);
  e->add_option("--id", ev.id);
  e->add_option("--out", ev.out)->required();

  InspectArgs in;
  auto* p = app.add_subcommand("inspect-params", "Trainable parameter report");
  p->add_option("--mode", in.mode)->check(CLI::IsMember({"full", "selective"}));
  p->add_option("--model-config", in.model_config);
  p->add_option("--out", in.out, "Directory for run.json");

  // Replay is handled before the normal parse so the subcommand requirement
  // does not reject a bare `--replay run.json`.
  if (args.size() == 2 && args[0] == "--replay") {
    const auto run = nlohmann::json::parse(read_text(args[1]));
    return dispatch(run.at("argv").get<std::vector<std::string>>());
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& err) {
    std::cerr << err.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  if (*s) return run_synth(synth, args);
  if (*t) return run_train(tr, args);
  if (*y) return run_tryon(ty, args);
  if (*m) return run_smooth(sm, args);
  if (*f) return run_filter(fl, args);
  if (*e) return run_eval(ev, args);
  if (*p) return run_inspect(in, args);
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const UsageError& e) {
    log_event("error", {{"kind", "usage"}, {"message", e.what()}});
    return kExitUsage;
  } catch (const ConfigError& e) {
    log_event("error", {{"kind", "config"}, {"message", e.what()}});
    return kExitUsage;
  } catch (const std::exception& e) {
    log_event("error", {{"kind", "data"}, {"message", e.what()}});
    return kExitData;
  }
}
