// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "catv2ton/backbone.hpp"
#include "catv2ton/clipstream.hpp"
#include "catv2ton/dataprep.hpp"
#include "catv2ton/diffusion.hpp"
#include "catv2ton/errors.hpp"
#include "catv2ton/gradcheck.hpp"
#include "catv2ton/io.hpp"
#include "catv2ton/metrics.hpp"
#include "catv2ton/trainer.hpp"
#include "oracles.hpp"

using namespace catv2ton;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_work;

fs::path checkpoint_path() { return g_work / "overfit.cvtw"; }

// ---- 1 -------------------------------------------------------------------

struct ChannelStats {
  double mean, std;
};

ChannelStats loop_stats(const Tensord& x, std::size_t c, const std::vector<std::size_t>& frames) {
  const auto& s = x.shape();
  const std::size_t C = s[1], HW = s[2] * s[3];
  const auto d = x.data();
  double sum = 0.0, sq = 0.0;
  for (std::size_t t : frames)
    for (std::size_t i = 0; i < HW; ++i) sum += d[(t * C + c) * HW + i];
  const double n = double(frames.size() * HW), m = sum / n;
  for (std::size_t t : frames)
    for (std::size_t i = 0; i < HW; ++i) sq += (d[(t * C + c) * HW + i] - m) * (d[(t * C + c) * HW + i] - m);
  return {m, std::sqrt(sq / n)};
}

Outcome adacn_exactness() {
  Rng rng(101);
  double worst = 0.0;
  int fixtures = 0;
  while (fixtures < 100) {
    const std::size_t L = rng.uniform_int(2, 8), C = rng.uniform_int(1, 3), H = rng.uniform_int(1, 5),
                      W = rng.uniform_int(2, 5);
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < L; ++t)
      if (rng.bernoulli(0.4)) idx.push_back(t);
    if (idx.empty()) idx.push_back(rng.uniform_int(0, L - 1));
    auto x = oracle::random_tensor({L, C, H, W}, rng, rng.uniform(0.1, 3.0));
    auto y = oracle::random_tensor({idx.size(), C, H, W}, rng, rng.uniform(0.05, 2.0));
    for (auto& v : y.mutable_data()) v += 0.5;
    std::vector<std::size_t> all(idx.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    bool degenerate = false;
    for (std::size_t c = 0; c < C; ++c) degenerate |= loop_stats(x, c, idx).std < 1e-3;
    if (degenerate) continue;
    ++fixtures;
    auto out = adacn(x, y, idx);
    for (std::size_t c = 0; c < C; ++c) {
      const auto want = loop_stats(y, c, all), got = loop_stats(out, c, idx);
      worst = std::max({worst, std::abs(got.mean - want.mean), std::abs(got.std - want.std)});
    }
  }
  Tensord hx({3, 1, 1, 1}, {2.0, 4.0, 6.0});
  Tensord hy({2, 1, 1, 1}, {0.0, 2.0});
  const bool hand = oracle::to_vec(adacn(hx, hy, {0, 1})) == oracle::Mat{0.0, 2.0, 4.0};
  return {worst <= 1e-5 && hand,
          "100 fixtures, max stat error " + fmt("%.2e", worst) + ", hand example " + (hand ? "exact" : "MISMATCH")};
}

// ---- 2 -------------------------------------------------------------------

Tensord probe(const Tensord& out, std::uint64_t seed) {
  Rng rng(seed + 7000);
  return sum(mul(out, oracle::random_tensor(out.shape(), rng)));
}

std::vector<TokenPosition> grid_positions(std::size_t n) {
  std::vector<TokenPosition> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back({int(i / 4), int((i / 2) % 2), int(i % 2)});
  return p;
}

void randomize(BlockWeights<double>& w, Rng& rng) {
  for (auto* t : {&w.ln1_gamma, &w.ln1_beta, &w.wq, &w.wk, &w.wv, &w.wo, &w.ln2_gamma, &w.ln2_beta, &w.w1, &w.b1,
                  &w.w2, &w.b2})
    *t = oracle::random_tensor(t->shape(), rng, 0.4);
  for (auto& v : w.ln1_gamma.mutable_data()) v += 1.0;
  for (auto& v : w.ln2_gamma.mutable_data()) v += 1.0;
}

Outcome gradient_correctness() {
  ModelConfig cfg;
  cfg.num_blocks = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 24;
  cfg.patch = 2;
  cfg.channels = 1;
  cfg.pose_channels = 1;
  std::set<std::string> failed_layers;
  int checks = 0;
  double worst = 0.0;
  auto check = [&](const std::string& layer, const std::function<Tensord(const Tensord&)>& f, const Tensord& x) {
    auto r = finite_diff_check(f, x, 1e-5, 1e-3);
    ++checks;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed_layers.insert(layer);
  };

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 200);
    auto a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({4, 5}, rng);
    check("matmul", [&](const Tensord& v) { return probe(matmul(v, b), seed); }, a);
    check("matmul", [&](const Tensord& v) { return probe(matmul(a, v), seed); }, b);

    auto s = oracle::random_tensor({4, 6}, rng, 2.0);
    check("softmax", [&](const Tensord& v) { return probe(softmax(v, 1), seed); }, s);
    check("softmax", [&](const Tensord& v) { return probe(softmax(v, 0), seed); }, s);

    auto g = oracle::random_tensor({6}, rng), be = oracle::random_tensor({6}, rng);
    check("layer_norm", [&](const Tensord& v) { return probe(layer_norm(v, g, be), seed); }, s);
    check("layer_norm", [&](const Tensord& v) { return probe(layer_norm(s, v, be), seed); }, g);
    check("layer_norm", [&](const Tensord& v) { return probe(layer_norm(s, g, v), seed); }, be);

    check("gelu", [&](const Tensord& v) { return probe(gelu(v), seed); }, s);

    auto q = oracle::random_tensor({5, 8}, rng), k = oracle::random_tensor({5, 8}, rng),
         val = oracle::random_tensor({5, 8}, rng);
    check("attention", [&](const Tensord& v) { return probe(attention(v, k, val, 2), seed); }, q);
    check("attention", [&](const Tensord& v) { return probe(attention(q, v, val, 2), seed); }, k);
    check("attention", [&](const Tensord& v) { return probe(attention(q, k, v, 2), seed); }, val);

    DiTModel<double> model(cfg, seed);
    BlockWeights<double> w = model.weights().blocks[0];
    randomize(w, rng);
    const std::size_t n = 6;
    const auto pos = grid_positions(n);
    auto x = oracle::random_tensor({n, cfg.hidden}, rng);
    auto temb = oracle::random_tensor({1, cfg.hidden}, rng, 0.3);
    auto block = [&](const BlockWeights<double>& ww, const Tensord& xx, const Tensord& tt) {
      return probe(dit_block(xx, std::optional<Tensord>(tt), pos, ww, cfg), seed);
    };
    check("dit_block", [&](const Tensord& v) { return block(w, v, temb); }, x);
    check("dit_block", [&](const Tensord& v) { return block(w, x, v); }, temb);
    for (Tensord BlockWeights<double>::*field :
         {&BlockWeights<double>::ln1_gamma, &BlockWeights<double>::ln1_beta, &BlockWeights<double>::wq,
          &BlockWeights<double>::wk, &BlockWeights<double>::wv, &BlockWeights<double>::wo,
          &BlockWeights<double>::ln2_gamma, &BlockWeights<double>::ln2_beta, &BlockWeights<double>::w1,
          &BlockWeights<double>::b1, &BlockWeights<double>::w2, &BlockWeights<double>::b2})
      check("dit_block",
            [&](const Tensord& v) {
              BlockWeights<double> ww = w;
              ww.*field = v;
              return block(ww, x, temb);
            },
            (w.*field).clone());

    PoseEncoderWeights<double> pw = model.weights().pose;
    randomize(pw.block, rng);
    pw.out_w = oracle::random_tensor(pw.out_w.shape(), rng, 0.5);
    auto pose = oracle::random_tensor({n, cfg.pose_token_in()}, rng);
    check("pose_inject", [&](const Tensord& v) { return probe(pose_inject(x, v, pos, pw, cfg), seed); }, pose);
    check("pose_inject", [&](const Tensord& v) { return probe(pose_inject(v, pose, pos, pw, cfg), seed); }, x);
    for (Tensord PoseEncoderWeights<double>::*field :
         {&PoseEncoderWeights<double>::embed_w, &PoseEncoderWeights<double>::embed_b,
          &PoseEncoderWeights<double>::out_w, &PoseEncoderWeights<double>::out_b})
      check("pose_inject",
            [&](const Tensord& v) {
              PoseEncoderWeights<double> p2 = pw;
              p2.*field = v;
              return probe(pose_inject(x, pose, pos, p2, cfg), seed);
            },
            (pw.*field).clone());
  }
  std::string detail = std::to_string(checks) + " checks over 10 seeds, max rel error " + fmt("%.2e", worst);
  for (const auto& l : failed_layers) detail += ", failed: " + l;
  return {failed_layers.empty(), detail};
}

// ---- 3 -------------------------------------------------------------------

// Mean ε-prediction loss over every sample at a fixed timestep grid with
// fixed noise and no augmentation.
double fixed_grid_loss(const DiTModel<float>& model, const NoiseSchedule& sched,
                       const std::vector<TryOnSample>& data) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto seq = assemble_sequence(s.person, s.mask, s.pose, s.garment, 0);
    for (std::size_t t = 50; t < 1000; t += 100) {
      Rng rng(1000 * i + t);
      VideoTensor eps(s.target.frames(), s.target.channels(), s.target.height(), s.target.width());
      for (auto& v : eps.values()) v = static_cast<float>(rng.normal());
      total += training_loss(model, sched, seq, s.target, t, eps).item();
      ++n;
    }
  }
  return total / double(n);
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CATV2TON_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return status == 0 ? 0 : (status > 255 ? status >> 8 : status);
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

Outcome overfit() {
  const fs::path data_dir = g_work / "data";
  fs::remove_all(data_dir);
  make_synthetic_dataset(data_dir, SynthConfig{});
  const auto data = load_dataset(data_dir);
  const auto sched = make_schedule();

  DiTModel<float> model(ModelConfig{}, 0);
  TrainConfig cfg;
  // 2000 steps in two resolution stages: 16x12, then native 32x24.
  cfg.stages = {{2, 1000}, {1, 1000}};
  cfg.steps = cfg.total_steps();
  cfg.lr = 2e-3;
  cfg.batch_size = 4;
  cfg.freeze_mode = FreezeMode::full;
  cfg.seed = 0;

  const double initial = fixed_grid_loss(model, sched, data);
  std::vector<double> losses;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow& r) {
    losses.push_back(r.loss);
    if ((r.step + 1) % 250 == 0) std::printf("  [overfit] step %zu loss %.4f\n", r.step + 1, r.loss), std::fflush(stdout);
  };
  train(data, model, cfg, hooks);
  save_checkpoint(checkpoint_path(), model);
  write_text(g_work / "overfit_loss.csv", [&] {
    std::vector<TrainLogRow> rows;
    for (std::size_t i = 0; i < losses.size(); ++i) rows.push_back({i, losses[i], 0.0, cfg.lr});
    return loss_trace_csv(rows);
  }());
  const double final_loss = fixed_grid_loss(model, sched, data);

  auto window_mean = [&](std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += losses[i];
    return s / double(end - begin);
  };
  const double head = window_mean(0, 100), tail = window_mean(losses.size() - 100, losses.size());

  const fs::path v = data_dir / "v000";
  const fs::path out = g_work / "tryon_v000";
  fs::remove_all(out);
  const int rc = run_cli("tryon --person " + q(v / "person") + " --garment " + q(v / "garment.ppm") + " --mask " +
                             q(v / "mask") + " --pose " + q(v / "pose") + " --ckpt " + q(checkpoint_path()) +
                             " --seed 0 --out " + q(out),
                         g_work / "tryon_v000.log");
  double mssim = -1.0;
  if (rc == 0) {
    const auto pred = read_frames(out, FrameKind::image);
    mssim = evaluate_sample("v000", pred, data[0].target, data[0].mask).masked_ssim;
  }
  const bool pass = final_loss < initial / 5.0 && rc == 0 && mssim > 0.80;
  return {pass, "fixed-grid loss " + fmt("%.4f", initial) + " -> " + fmt("%.4f", final_loss) + " (ratio " +
                    fmt("%.3f", final_loss / initial) + "), trailing-100 train loss " + fmt("%.4f", head) + " -> " +
                    fmt("%.4f", tail) + ", paired tryon masked SSIM " + fmt("%.4f", mssim) +
                    (rc == 0 ? "" : " (cli exit " + std::to_string(rc) + ")")};
}

// ---- 4 -------------------------------------------------------------------

Outcome adacn_ablation() {
  if (!fs::exists(checkpoint_path())) return {false, "no overfit checkpoint at " + checkpoint_path().string()};
  const auto model = load_checkpoint(checkpoint_path());
  const auto sched = make_schedule();
  const auto synth = make_synthetic_sample(synthetic_sample_seed(0, 0), 56, 32, 24);
  const LongVideoInputs in{synth.sample.person, synth.sample.mask, synth.sample.pose, synth.sample.garment};
  LongVideoOptions opt;
  opt.clip_length = 32;
  opt.overlap = 8;
  opt.sampler.steps = kVideoSampler.steps;
  opt.sampler.cfg_strength = kVideoSampler.cfg_strength;
  opt.sampler.seed = 0;
  opt.prompt_bias = 0.1f;
  opt.bias_window = 1;
  opt.use_adacn = true;
  const auto with = generate_long(model, sched, in, opt);
  opt.use_adacn = false;
  const auto without = generate_long(model, sched, in, opt);
  const double sw = seam_discontinuity(with.video, with.plan), so = seam_discontinuity(without.video, without.plan);
  return {sw <= so, "seam with AdaCN " + fmt("%.4f", sw) + ", without " + fmt("%.4f", so)};
}

// ---- 5 -------------------------------------------------------------------

Outcome plan_coverage() {
  std::size_t plans = 0, bad = 0;
  std::string first_bad;
  for (std::size_t T = 1; T <= 128; ++T)
    for (std::size_t L = 1; L <= 32; ++L)
      for (std::size_t k = 0; k < L; ++k) {
        ++plans;
        const auto plan = plan_clips(T, L, k);
        std::vector<int> owner(T, 0);
        bool ok = !plan.windows.empty() && plan.windows.front().start == 0 && plan.windows.front().prompt_count == 0;
        std::size_t produced = 0;
        std::vector<VideoTensor> clips;
        for (const auto& w : plan.windows) {
          ok &= w.length == std::min(T, L) && w.end() <= T && w.prompt_count < w.length;
          ok &= w.start + w.prompt_count <= produced || (&w == &plan.windows.front());
          for (std::size_t j = w.start + w.prompt_count; j < w.end() && j < T; ++j) ++owner[j];
          produced = std::max(produced, w.end());
          VideoTensor c(w.length, 1, 1, 1);
          for (std::size_t j = 0; j < w.length; ++j) c.at(j, 0, 0, 0) = float(w.start + j);
          clips.push_back(c);
        }
        for (int o : owner) ok &= o == 1;
        if (ok) {
          const auto st = stitch(clips, plan);
          ok &= st.frames() == T;
          for (std::size_t j = 0; ok && j < T; ++j) ok &= st.at(j, 0, 0, 0) == float(j);
        }
        if (!ok && bad++ == 0)
          first_bad = " first failure T=" + std::to_string(T) + " L=" + std::to_string(L) + " k=" + std::to_string(k);
      }
  return {bad == 0, std::to_string(plans) + " plans, " + std::to_string(bad) + " violations" + first_bad};
}

// ---- 6 -------------------------------------------------------------------

Outcome parameter_budget() {
  DiTModel<float> model(ModelConfig{}, 0);
  const auto report = model.freeze_partition(FreezeMode::selective);
  std::size_t pose = 0;
  for (const auto& p : model.parameters())
    if (p.name.rfind("pose.", 0) == 0) pose += p.value.numel();
  const double backbone_only = double(report.trainable - pose) / double(report.total - pose);

  Rng wr(1);
  for (auto& v : model.weights().unembed_w.mutable_data()) v = static_cast<float>(wr.normal() * 0.02);
  std::vector<oracle::Mat> init;
  for (const auto& p : model.parameters()) init.push_back(oracle::to_vec(p.value));
  const auto before = frozen_checksum(model.parameters());
  TrainConfig cfg;
  cfg.steps = 100;
  cfg.freeze_mode = FreezeMode::selective;
  std::size_t steps = 0, drift = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow&) {
    ++steps;
    drift += frozen_checksum(model.parameters()) != before;
  };
  train(synthetic_dataset(SynthConfig{}), model, cfg, hooks);
  bool frozen_same = true, moved = false;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    const bool same = oracle::to_vec(p.value) == init[i];
    if (!p.trainable) frozen_same &= same;
    if (p.trainable && !same) moved = true;
  }
  const bool checksum_ok = steps == 100 && drift == 0 && frozen_same && moved;
  return {report.ratio < 0.20 && checksum_ok,
          "selective ratio " + fmt("%.4f", report.ratio) + " (" + std::to_string(report.trainable) + "/" +
              std::to_string(report.total) + ", required < 0.20; attention-only share without the pose encoder " +
              fmt("%.4f", backbone_only) + "), frozen checksum " +
              (checksum_ok ? "invariant over 100 steps" : "CHANGED or trainables idle")};
}

// ---- 7 -------------------------------------------------------------------

VideoTensor column(std::initializer_list<float> values) {
  VideoTensor v(values.size(), 1, 1, 1);
  std::size_t i = 0;
  for (float x : values) v.at(i++, 0, 0, 0) = x;
  return v;
}

Outcome mask_smoothing() {
  const SmoothingConfig hand{{3, 1, 1}, 0.5};
  const bool h1 = smooth_mask_3d(column({1, 0, 1}), hand) == column({1, 1, 1});
  const bool h2 = smooth_mask_3d(column({0, 1, 0}), hand) == column({0, 0, 0});
  const auto raw = flickering_mask_fixture(0);
  const auto smooth = smooth_mask_3d(raw);
  bool binary = true;
  for (float v : smooth.values()) binary &= v == 0.0f || v == 1.0f;
  const double fr = temporal_flicker(raw), fs_ = temporal_flicker(smooth);
  return {h1 && h2 && binary && fs_ < fr, "flicker " + fmt("%.5f", fr) + " -> " + fmt("%.5f", fs_) +
                                              (binary ? ", binary" : ", NON-BINARY") +
                                              (h1 && h2 ? ", hand cases exact" : ", hand case MISMATCH")};
}

// ---- 8 -------------------------------------------------------------------

Outcome training_statistics() {
  SynthConfig s;
  s.videos = 1;
  s.images = 0;
  const auto video = synthetic_dataset(s)[0];
  Rng rng(8);
  const TrainConfig cfg;
  const std::size_t n = 10000;
  std::size_t dropped = 0, exposed = 0, leaks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = augment_sample(video, rng, cfg);
    dropped += a.garment_dropped;
    if (a.prompt_count == 0) continue;
    ++exposed;
    const auto& seq = a.sequence;
    for (std::size_t t = 0; t < a.prompt_count; ++t) {
      const std::size_t f = seq.garment_frames + t;
      for (std::size_t y = 0; y < seq.frames.height(); ++y)
        for (std::size_t x = 0; x < seq.frames.width(); ++x) leaks += seq.frames.at(f, seq.mask_channel(), y, x) != 0.0f;
      leaks += seq.roles[f] != FrameRole::prompt;
    }
  }
  const double fd = double(dropped) / n, fe = double(exposed) / n;
  return {fd >= 0.09 && fd <= 0.11 && fe >= 0.18 && fe <= 0.22 && leaks == 0,
          "dropout " + fmt("%.4f", fd) + ", exposure " + fmt("%.4f", fe) + ", nonzero prompt mask entries " +
              std::to_string(leaks)};
}

// ---- 9 -------------------------------------------------------------------

Outcome sampler_contracts() {
  Rng rng(9);
  auto u = oracle::random_tensor({64}, rng), c = oracle::random_tensor({64}, rng);
  const bool ends = oracle::to_vec(cfg_combine(u, c, 0.0)) == oracle::to_vec(u) &&
                    oracle::to_vec(cfg_combine(u, c, 1.0)) == oracle::to_vec(c);
  const auto img = sampler_defaults(1), vid = sampler_defaults(16);
  const bool defaults = img.steps == 20 && img.cfg_strength == 3.0 && vid.steps == 15 && vid.cfg_strength == 2.5;

  const auto sched = make_schedule();
  const std::size_t n = 10000;
  bool moments = true;
  double worst_z = 0.0;
  for (std::size_t t : {0u, 100u, 500u, 999u}) {
    const double x0 = -0.4;
    auto eps = oracle::random_tensor({n}, rng);
    const auto xt = oracle::to_vec(q_sample(sched, Tensord::full({n}, x0), t, eps));
    const double mu = std::sqrt(sched.alpha_bar[t]) * x0, var = 1.0 - sched.alpha_bar[t];
    const double m = oracle::mean(xt), sd = oracle::pop_std(xt);
    const double zm = std::abs(m - mu) / std::sqrt(var / n);
    const double zv = std::abs(sd * sd - var) / (var * std::sqrt(2.0 / (n - 1)));
    worst_z = std::max({worst_z, zm, zv});
    moments &= zm < 3.0 && zv < 3.0;
  }
  return {ends && defaults && moments, std::string("cfg endpoints ") + (ends ? "exact" : "INEXACT") +
                                           ", defaults " + (defaults ? "(20, 3.0)/(15, 2.5)" : "WRONG") +
                                           ", worst moment z-score " + fmt("%.2f", worst_z)};
}

// ---- 10 ------------------------------------------------------------------

Outcome frontal_filtering() {
  auto track = [](std::size_t n) {
    OrientationTrack t;
    t.labels.assign(n, Orientation::frontal);
    return t;
  };
  const bool edge = filter_frontal_runs(track(24)).empty() && filter_frontal_runs(track(25)).size() == 1;
  Rng rng(10);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = rng.uniform_int(0, 300);
    const double p = rng.uniform(0.6, 1.0);
    OrientationTrack t;
    std::vector<bool> flags;
    for (std::size_t i = 0; i < n; ++i) {
      flags.push_back(rng.bernoulli(p));
      t.labels.push_back(flags.back() ? Orientation::frontal : Orientation::back);
    }
    const auto got = filter_frontal_runs(t);
    const auto want = oracle::frontal_runs(flags, 24);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].start == want[i].start && got[i].length == want[i].length;
    mismatches += !same;
  }
  return {edge && mismatches == 0, std::string("24 dropped / 25 kept ") + (edge ? "ok" : "WRONG") +
                                       ", brute-force mismatches " + std::to_string(mismatches) + "/1000"};
}

// ---- 11 ------------------------------------------------------------------

using Bytes = std::vector<std::uint8_t>;

Bytes mutate_header(const Bytes& src, std::size_t header_len, Rng& rng) {
  Bytes b = src;
  const std::size_t pos = rng.uniform_int(0, header_len - 1);
  switch (rng.uniform_int(0, 4)) {
    case 0: b[pos] = static_cast<std::uint8_t>(rng.uniform_int(0, 255)); break;
    case 1: b[pos] ^= static_cast<std::uint8_t>(1u << rng.uniform_int(0, 7)); break;
    case 2: b.erase(b.begin() + static_cast<std::ptrdiff_t>(pos)); break;
    case 3: b.insert(b.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<std::uint8_t>(rng.uniform_int(0, 255))); break;
    default: b.resize(pos); break;
  }
  return b;
}

Outcome format_round_trips() {
  Rng rng(11);
  const fs::path dir = g_work / "formats";
  fs::create_directories(dir);
  bool trips = true;

  auto raster = [&](std::size_t w, std::size_t h, std::size_t c) {
    RasterImage img{w, h, c, {}};
    for (std::size_t i = 0; i < w * h * c; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
    return img;
  };
  const auto ppm_img = raster(7, 5, 3), pgm_img = raster(6, 4, 1);
  const Bytes ppm = encode_pnm(ppm_img), pgm = encode_pnm(pgm_img);
  write_pnm(dir / "a.ppm", ppm_img);
  write_pnm(dir / "a.pgm", pgm_img);
  trips &= encode_pnm(decode_pnm(ppm)) == ppm && read_file(dir / "a.ppm") == ppm && read_pnm(dir / "a.ppm") == ppm_img;
  trips &= encode_pnm(decode_pnm(pgm)) == pgm && read_file(dir / "a.pgm") == pgm && read_pnm(dir / "a.pgm") == pgm_img;

  const auto tf = cast<float>(oracle::random_tensor({2, 3, 4}, rng));
  const auto td = oracle::random_tensor({5, 2}, rng);
  const Bytes cvtf = encode_cvt(tf), cvtd = encode_cvt(td);
  trips &= encode_cvt(decode_cvt<float>(cvtf)) == cvtf && encode_cvt(decode_cvt<double>(cvtd)) == cvtd;

  ModelConfig mc;
  mc.num_blocks = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.ffn = 24;
  mc.patch = 2;
  const DiTModel<float> model(mc, 4);
  const Bytes ckpt = encode_checkpoint(model);
  save_checkpoint(dir / "m.cvtw", model);
  trips &= encode_checkpoint(decode_checkpoint(ckpt)) == ckpt && read_file(dir / "m.cvtw") == ckpt &&
           encode_checkpoint(load_checkpoint(dir / "m.cvtw")) == ckpt;

  std::size_t rejected = 0, equivalent = 0, unclean = 0;
  auto fuzz = [&](const Bytes& fixture, std::size_t header_len, const std::function<bool(const Bytes&)>& same) {
    for (int i = 0; i < 250; ++i) {
      const Bytes m = mutate_header(fixture, header_len, rng);
      try {
        if (same(m))
          ++equivalent;
        else
          ++unclean;
      } catch (const ParseError&) {
        ++rejected;
      } catch (...) {
        ++unclean;
      }
    }
  };
  fuzz(ppm, 11, [&](const Bytes& b) { return decode_pnm(b) == ppm_img; });
  fuzz(pgm, 11, [&](const Bytes& b) { return decode_pnm(b) == pgm_img; });
  fuzz(cvtf, 20, [&](const Bytes& b) { return encode_cvt(decode_cvt<float>(b)) == cvtf; });
  fuzz(ckpt, 64, [&](const Bytes& b) { return encode_checkpoint(decode_checkpoint(b)) == ckpt; });
  return {trips && unclean == 0, std::string("round trips ") + (trips ? "byte-identical" : "DIFFER") +
                                     ", 1000 header mutations: " + std::to_string(rejected) + " rejected, " +
                                     std::to_string(equivalent) + " decoded to identical content, " +
                                     std::to_string(unclean) + " unclean"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory for datasets, checkpoints and outputs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(workdir);
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria = {
      {1, "AdaCN exactness", 1.0, adacn_exactness},
      {2, "gradient correctness", 120.0, gradient_correctness},
      {3, "overfit experiment", 1800.0, overfit},
      {4, "AdaCN ablation direction", 600.0, adacn_ablation},
      {5, "clip-plan coverage", 60.0, plan_coverage},
      {6, "parameter budget", 300.0, parameter_budget},
      {7, "mask smoothing", 1.0, mask_smoothing},
      {8, "training-strategy statistics", 10.0, training_statistics},
      {9, "sampler and guidance contracts", 30.0, sampler_contracts},
      {10, "frontal filtering", 5.0, frontal_filtering},
      {11, "format round trips", 30.0, format_round_trips},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s criterion %d (%s): %s; %.2f s of %.0f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs, c.limit_s, in_time ? "" : " OVER TIME LIMIT");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
