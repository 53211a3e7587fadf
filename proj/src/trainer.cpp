#include "catv2ton/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <sstream>

namespace catv2ton {

void TrainConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("train config: ") + name + " must be in [0,1]");
  };
  prob(garment_dropout, "garment_dropout");
  prob(exposure_prob, "exposure_prob");
  if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be > 0");
  if (!(lr >= 0.0)) throw ConfigError("train config: lr must be >= 0");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  if (mix_images == 0 && mix_videos == 0) throw ConfigError("train config: empty mixing pattern");
  for (const auto& s : stages) {
    if (s.downsample == 0) throw ConfigError("train config: stage downsample must be >= 1");
  }
}

std::size_t TrainConfig::total_steps() const {
  if (stages.empty()) return steps;
  std::size_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["clip_norm"] = clip_norm;
  j["garment_dropout"] = garment_dropout;
  j["exposure_prob"] = exposure_prob;
  j["exposure_k_max"] = exposure_k_max;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["freeze_mode"] = freeze_mode == FreezeMode::full ? "full" : "selective";
  j["seed"] = seed;
  j["weight_decay"] = weight_decay;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["mix_images"] = mix_images;
  j["mix_videos"] = mix_videos;
  j["use_pose"] = use_pose;
  j["checkpoint_every"] = checkpoint_every;
  j["diffusion_steps"] = diffusion_steps;
  j["beta_start"] = beta_start;
  j["beta_end"] = beta_end;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : stages) j["stages"].push_back({{"downsample", s.downsample}, {"steps", s.steps}});
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    static const char* known[] = {"lr", "clip_norm", "garment_dropout", "exposure_prob",
                                  "exposure_k_max", "batch_size", "steps", "freeze_mode", "seed",
                                  "weight_decay", "beta1", "beta2", "adam_eps", "mix_images",
                                  "mix_videos", "use_pose", "checkpoint_every", "diffusion_steps",
                                  "beta_start", "beta_end", "stages", "model", "dataset", "output"};
    for (const auto& [key, _] : j.items()) {
      if (std::find_if(std::begin(known), std::end(known),
                       [&](const char* k) { return key == k; }) == std::end(known)) {
        throw ConfigError("train config: unknown field '" + key + "'");
      }
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("lr", c.lr);
    get("clip_norm", c.clip_norm);
    get("garment_dropout", c.garment_dropout);
    get("exposure_prob", c.exposure_prob);
    get("exposure_k_max", c.exposure_k_max);
    get("batch_size", c.batch_size);
    get("steps", c.steps);
    if (j.contains("freeze_mode")) {
      const auto mode = j.at("freeze_mode").get<std::string>();
      if (mode == "full") {
        c.freeze_mode = FreezeMode::full;
      } else if (mode == "selective") {
        c.freeze_mode = FreezeMode::selective;
      } else {
        throw ConfigError("train config: freeze_mode must be 'full' or 'selective'");
      }
    }
    get("seed", c.seed);
    get("weight_decay", c.weight_decay);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("mix_images", c.mix_images);
    get("mix_videos", c.mix_videos);
    get("use_pose", c.use_pose);
    get("checkpoint_every", c.checkpoint_every);
    get("diffusion_steps", c.diffusion_steps);
    get("beta_start", c.beta_start);
    get("beta_end", c.beta_end);
    if (j.contains("stages")) {
      for (const auto& s : j.at("stages")) {
        c.stages.push_back({s.at("downsample").get<std::size_t>(), s.at("steps").get<std::size_t>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

OptimizerStepStats optimizer_step(std::vector<Parameter<float>>& params, OptimizerState& state,
                                  const TrainConfig& cfg) {
  if (state.m.size() < params.size()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.trainable || !p.value.has_grad()) continue;
    for (float g : p.value.grad()) {
      if (!std::isfinite(g)) {
        throw ContractError("optimizer_step: non-finite gradient in parameter '" + p.name + "'");
      }
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  OptimizerStepStats stats;
  stats.grad_norm = std::sqrt(sq);
  if (stats.grad_norm > cfg.clip_norm) stats.clip_scale = cfg.clip_norm / stats.grad_norm;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const auto scale = static_cast<float>(stats.clip_scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto values = p.value.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.empty()) {
      m.assign(values.size(), 0.0f);
      v.assign(values.size(), 0.0f);
    }
    std::span<float> grad;
    if (p.value.has_grad()) {
      grad = p.value.mutable_grad();
      if (scale != 1.0f) {
        for (auto& g : grad) g *= scale;
      }
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = static_cast<float>(cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g);
      v[k] = static_cast<float>(cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g);
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      const double update = mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * values[k];
      values[k] = static_cast<float>(values[k] - cfg.lr * update);
    }
  }
  return stats;
}

AugmentedSequence augment_sample(const TryOnSample& sample, Rng& rng, const TrainConfig& cfg) {
  AugmentedSequence out;
  out.garment_dropped = rng.bernoulli(cfg.garment_dropout);
  const std::size_t T = sample.frames();
  if (T > 1 && rng.bernoulli(cfg.exposure_prob)) {
    const std::size_t k_max =
        std::min(T, std::max<std::size_t>(1, cfg.exposure_k_max ? cfg.exposure_k_max : T / 4));
    out.prompt_count = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(k_max)));
  }
  out.sequence = assemble_sequence(sample.person, sample.mask, sample.pose, sample.garment,
                                   out.prompt_count);
  if (out.garment_dropped) out.sequence = drop_garment(out.sequence);
  return out;
}

namespace {

VideoTensor box_downsample(const VideoTensor& v, std::size_t f, bool binarize) {
  if (v.height() % f != 0 || v.width() % f != 0) {
    throw ConfigError("downsample: " + std::to_string(v.height()) + "x" +
                      std::to_string(v.width()) + " not divisible by " + std::to_string(f));
  }
  VideoTensor out(v.frames(), v.channels(), v.height() / f, v.width() / f);
  const float inv = 1.0f / static_cast<float>(f * f);
  for (std::size_t t = 0; t < v.frames(); ++t)
    for (std::size_t c = 0; c < v.channels(); ++c)
      for (std::size_t h = 0; h < out.height(); ++h)
        for (std::size_t w = 0; w < out.width(); ++w) {
          float acc = 0.0f;
          for (std::size_t dy = 0; dy < f; ++dy)
            for (std::size_t dx = 0; dx < f; ++dx) acc += v.at(t, c, h * f + dy, w * f + dx);
          acc *= inv;
          out.at(t, c, h, w) = binarize ? (acc >= 0.5f ? 1.0f : 0.0f) : acc;
        }
  return out;
}

}  // namespace

TryOnSample downsample_sample(const TryOnSample& sample, std::size_t factor) {
  if (factor <= 1) return sample;
  TryOnSample out;
  out.id = sample.id;
  out.person = box_downsample(sample.person, factor, false);
  out.mask = box_downsample(sample.mask, factor, true);
  out.pose = box_downsample(sample.pose, factor, false);
  out.garment = box_downsample(sample.garment, factor, false);
  out.target = box_downsample(sample.target, factor, false);
  return out;
}

TrainResult train(const std::vector<TryOnSample>& dataset, DiTModel<float>& model,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");

  TrainResult result;
  result.freeze = model.freeze_partition(cfg.freeze_mode);
  const NoiseSchedule schedule = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
  std::vector<TrainStage> stages = cfg.stages;
  if (stages.empty()) stages.push_back({1, cfg.steps});

  Rng rng(cfg.seed);
  OptimizerState state;
  auto& params = model.parameters();
  std::size_t global_step = 0;

  for (const auto& stage : stages) {
    std::vector<TryOnSample> images, videos;
    for (const auto& s : dataset) {
      (s.is_image() ? images : videos).push_back(downsample_sample(s, stage.downsample));
    }
    const std::size_t period = cfg.mix_images + cfg.mix_videos;

    for (std::size_t i = 0; i < stage.steps; ++i, ++global_step) {
      bool use_images = (global_step % period) < cfg.mix_images;
      if (images.empty()) use_images = false;
      if (videos.empty()) use_images = true;
      const auto& pool = use_images ? images : videos;

      for (auto& p : params) p.value.zero_grad();
      double loss_total = 0.0;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto& sample =
            pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        const AugmentedSequence aug = augment_sample(sample, rng, cfg);
        const auto t = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(schedule.steps()) - 1));
        const VideoTensor eps(Tensorf::randn(sample.target.shape(), rng));
        Tensorf loss = training_loss(model, schedule, aug.sequence, sample.target, t, eps, cfg.use_pose);
        loss_total += loss.item();
        scale(loss, 1.0f / static_cast<float>(cfg.batch_size)).backward();
      }
      const OptimizerStepStats stats = optimizer_step(params, state, cfg);
      const TrainLogRow row{global_step, loss_total / static_cast<double>(cfg.batch_size),
                            stats.grad_norm, cfg.lr};
      result.trace.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
      if (cfg.checkpoint_every && hooks.on_checkpoint && (global_step + 1) % cfg.checkpoint_every == 0) {
        hooks.on_checkpoint(global_step + 1, model);
      }
    }
  }
  for (auto& p : params) p.value.zero_grad();
  return result;
}

std::uint64_t frozen_checksum(const std::vector<Parameter<float>>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    if (p.trainable) continue;
    for (float v : p.value.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

std::string loss_trace_csv(const std::vector<TrainLogRow>& trace) {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss,grad_norm,lr\n";
  for (const auto& r : trace) os << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.lr << '\n';
  return os.str();
}

}  // namespace catv2ton
