#include "catv2ton/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace catv2ton {

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ConfigError("schedule: need at least one timestep");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

namespace {

void require_timestep(const NoiseSchedule& s, std::size_t t) {
  if (t >= s.steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside schedule of " +
                     std::to_string(s.steps()));
  }
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> q_sample(const NoiseSchedule& schedule, const Tensor<T>& x0, std::size_t t,
                   const Tensor<T>& eps) {
  require_timestep(schedule, t);
  require_same(x0, eps, "q_sample");
  const T a = static_cast<T>(std::sqrt(schedule.alpha_bar[t]));
  const T b = static_cast<T>(std::sqrt(1.0 - schedule.alpha_bar[t]));
  std::vector<T> out(x0.numel());
  const auto xd = x0.data(), ed = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xd[i] + b * ed[i];
  return Tensor<T>(x0.shape(), std::move(out));
}

VideoTensor q_sample(const NoiseSchedule& schedule, const VideoTensor& x0, std::size_t t,
                     const VideoTensor& eps) {
  return VideoTensor(q_sample(schedule, x0.tensor(), t, eps.tensor()));
}

template <typename T>
Tensor<T> ddpm_step_between(const Tensor<T>& x_t, const Tensor<T>& eps_hat, double alpha_bar_t,
                            double alpha_bar_prev, const Tensor<T>& z) {
  require_same(x_t, eps_hat, "ddpm_step");
  require_same(x_t, z, "ddpm_step");
  const double alpha = alpha_bar_t / alpha_bar_prev;
  const double beta = 1.0 - alpha;
  const double eps_coef = beta / std::sqrt(1.0 - alpha_bar_t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sigma = std::sqrt(beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t));
  std::vector<T> out(x_t.numel());
  const auto xd = x_t.data(), ed = eps_hat.data(), zd = z.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>((xd[i] - eps_coef * ed[i]) * inv_sqrt_alpha + sigma * zd[i]);
  }
  return Tensor<T>(x_t.shape(), std::move(out));
}

template <typename T>
Tensor<T> ddpm_step(const NoiseSchedule& schedule, const Tensor<T>& x_t, const Tensor<T>& eps_hat,
                    std::size_t t, const Tensor<T>& z) {
  require_timestep(schedule, t);
  const double prev = t == 0 ? 1.0 : schedule.alpha_bar[t - 1];
  return ddpm_step_between(x_t, eps_hat, schedule.alpha_bar[t], prev, z);
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double strength) {
  require_same(eps_uncond, eps_cond, "cfg_combine");
  if (!(strength >= 0.0)) throw ConfigError("cfg_combine: strength must be >= 0");
  // Weighted form so both interpolation endpoints reproduce their input exactly.
  const T s = static_cast<T>(strength);
  const T r = static_cast<T>(1.0 - strength);
  std::vector<T> out(eps_cond.numel());
  const auto u = eps_uncond.data(), c = eps_cond.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = r * u[i] + s * c[i];
  return Tensor<T>(eps_cond.shape(), std::move(out));
}

std::vector<std::size_t> strided_timesteps(std::size_t schedule_steps, std::size_t count) {
  if (count == 0 || count > schedule_steps) {
    throw ConfigError("sampler: step count " + std::to_string(count) + " must be in [1, " +
                      std::to_string(schedule_steps) + "]");
  }
  if (count == 1) return {schedule_steps - 1};
  std::vector<std::size_t> ts(count);
  const double span = static_cast<double>(schedule_steps - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(count - 1);
    ts[i] = static_cast<std::size_t>(std::llround(span * (1.0 - frac)));
  }
  return ts;
}

SamplerDefaults sampler_defaults(std::size_t person_frames) {
  return person_frames <= 1 ? kImageSampler : kVideoSampler;
}

namespace {

Tensorf clipped_noise(const Tensorf& x_t, const Tensorf& eps, double alpha_bar) {
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<float> out(x_t.numel());
  const auto xd = x_t.data(), ed = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = std::clamp((xd[i] - b * ed[i]) / a, -1.0, 1.0);
    out[i] = static_cast<float>((xd[i] - a * x0) / b);
  }
  return Tensorf(x_t.shape(), std::move(out));
}

}  // namespace

VideoTensor sample(const DiTModel<float>& model, const NoiseSchedule& schedule,
                   const ConditionedSequence& seq, const SampleOptions& options) {
  const std::vector<std::size_t> ts = strided_timesteps(schedule.steps(), options.steps);
  Rng rng(options.seed);
  const VideoTensor shape_ref = seq.person_latents();
  Tensorf x = Tensorf::randn(shape_ref.shape(), rng);

  ConditionedSequence cond = seq;
  ConditionedSequence uncond = drop_garment(seq);
  const double s = options.cfg_strength;
  const std::size_t G = seq.garment_frames;

  auto person_part = [&](const VideoTensor& all) {
    return all.slice_frames(G, all.frames()).tensor();
  };

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const VideoTensor xv(x);
    Tensorf eps;
    if (s == 0.0) {
      uncond.set_person_latents(xv);
      eps = person_part(predict_noise(model, uncond, static_cast<double>(t), options.use_pose));
    } else if (s == 1.0) {
      cond.set_person_latents(xv);
      eps = person_part(predict_noise(model, cond, static_cast<double>(t), options.use_pose));
    } else {
      cond.set_person_latents(xv);
      uncond.set_person_latents(xv);
      const Tensorf ec = person_part(predict_noise(model, cond, static_cast<double>(t), options.use_pose));
      const Tensorf eu = person_part(predict_noise(model, uncond, static_cast<double>(t), options.use_pose));
      eps = cfg_combine(eu, ec, s);
    }
    if (options.clip_x0) eps = clipped_noise(x, eps, schedule.alpha_bar[t]);
    const bool last = i + 1 == ts.size();
    const double abar_prev = last ? 1.0 : schedule.alpha_bar[ts[i + 1]];
    const Tensorf z = last ? Tensorf::zeros(x.shape()) : Tensorf::randn(x.shape(), rng);
    x = ddpm_step_between(x, eps, schedule.alpha_bar[t], abar_prev, z);
  }
  return VideoTensor(x);
}

Tensorf person_token_mse(const Tensorf& prediction, const Tensorf& eps_tokens,
                         std::size_t garment_tokens) {
  const Tensorf person = slice_rows(prediction, garment_tokens, prediction.dim(0));
  return mse(person, eps_tokens);
}

Tensorf training_loss(const DiTModel<float>& model, const NoiseSchedule& schedule,
                      const ConditionedSequence& seq, const VideoTensor& x0_person, std::size_t t,
                      const VideoTensor& eps, bool use_pose) {
  const auto& cfg = model.config();
  if (seq.frames.channels() != cfg.frame_channels()) {
    throw ContractError("training_loss: frames carry " + std::to_string(seq.frames.channels()) +
                        " channels, model expects " + std::to_string(cfg.frame_channels()));
  }
  ConditionedSequence noised = seq;
  noised.set_person_latents(q_sample(schedule, x0_person, t, eps));
  const Patchified x = patchify(noised.frames, cfg.patch);
  const Patchified pose = patchify(noised.pose, cfg.patch);
  const Patchified eps_tokens = patchify(eps, cfg.patch);
  const std::size_t per_frame = (seq.frames.height() / cfg.patch) * (seq.frames.width() / cfg.patch);
  const Tensorf pred =
      model.forward_tokens(x.tokens, pose.tokens, x.positions, static_cast<double>(t), use_pose);
  return person_token_mse(pred, eps_tokens.tokens, seq.garment_frames * per_frame);
}

#define CATV2TON_INSTANTIATE_DIFFUSION(T)                                                        \
  template Tensor<T> q_sample(const NoiseSchedule&, const Tensor<T>&, std::size_t,               \
                              const Tensor<T>&);                                                 \
  template Tensor<T> ddpm_step_between(const Tensor<T>&, const Tensor<T>&, double, double,       \
                                       const Tensor<T>&);                                        \
  template Tensor<T> ddpm_step(const NoiseSchedule&, const Tensor<T>&, const Tensor<T>&,         \
                               std::size_t, const Tensor<T>&);                                   \
  template Tensor<T> cfg_combine(const Tensor<T>&, const Tensor<T>&, double);

CATV2TON_INSTANTIATE_DIFFUSION(float)
CATV2TON_INSTANTIATE_DIFFUSION(double)

}  // namespace catv2ton
