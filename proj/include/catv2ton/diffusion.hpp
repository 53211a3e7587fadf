#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "catv2ton/backbone.hpp"
#include "catv2ton/conditioning.hpp"
#include "catv2ton/tensor.hpp"

namespace catv2ton {

/// Linear-beta DDPM schedule. All arrays are f64 and indexed by timestep.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }
};

NoiseSchedule make_schedule(std::size_t steps = 1000, double beta_start = 1e-4,
                            double beta_end = 0.02);

/// sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·ε
template <typename T>
Tensor<T> q_sample(const NoiseSchedule& schedule, const Tensor<T>& x0, std::size_t t,
                   const Tensor<T>& eps);
VideoTensor q_sample(const NoiseSchedule& schedule, const VideoTensor& x0, std::size_t t,
                     const VideoTensor& eps);

/// One reverse step between arbitrary cumulative products ᾱ_t -> ᾱ_prev
/// (ᾱ_prev = 1 yields the x0 estimate). With α = ᾱ_t/ᾱ_prev, β = 1-α:
///   x_prev = (x_t - β/sqrt(1-ᾱ_t)·ε̂)/sqrt(α) + σ·z,  σ² = β(1-ᾱ_prev)/(1-ᾱ_t)
template <typename T>
Tensor<T> ddpm_step_between(const Tensor<T>& x_t, const Tensor<T>& eps_hat, double alpha_bar_t,
                            double alpha_bar_prev, const Tensor<T>& z);

/// Schedule-indexed step t -> t-1. At t = 0 no noise is added whatever z holds.
template <typename T>
Tensor<T> ddpm_step(const NoiseSchedule& schedule, const Tensor<T>& x_t, const Tensor<T>& eps_hat,
                    std::size_t t, const Tensor<T>& z);

/// ε_uncond + s·(ε_cond - ε_uncond)
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_uncond, const Tensor<T>& eps_cond, double strength);

/// `count` evenly spaced timesteps from steps-1 down to 0 inclusive.
std::vector<std::size_t> strided_timesteps(std::size_t schedule_steps, std::size_t count);

struct SamplerDefaults {
  std::size_t steps;
  double cfg_strength;
};

inline constexpr SamplerDefaults kImageSampler{20, 3.0};
inline constexpr SamplerDefaults kVideoSampler{15, 2.5};

/// Image defaults for single-frame inputs, video defaults otherwise.
SamplerDefaults sampler_defaults(std::size_t person_frames);

struct SampleOptions {
  std::size_t steps = kVideoSampler.steps;
  double cfg_strength = kVideoSampler.cfg_strength;
  std::uint64_t seed = 0;
  bool use_pose = true;
  // Clamp each x0 estimate to the data range [-1, 1] before stepping.
  bool clip_x0 = true;
};

/// Ancestral DDPM sampling with classifier-free guidance. The conditional
/// branch sees `seq`, the unconditional one drop_garment(seq). Person latent
/// slots start from seeded Gaussian noise; garment slots stay clean. Returns
/// the final x0 estimate of the person frames, [T, C, H, W]. With clip_x0
/// the guided noise is replaced by the noise implied by the clamped x0.
VideoTensor sample(const DiTModel<float>& model, const NoiseSchedule& schedule,
                   const ConditionedSequence& seq, const SampleOptions& options);

/// ε-prediction MSE over person-frame tokens. Person latent slots of `seq`
/// are replaced by q_sample(x0_person, t, eps) before the forward pass.
Tensorf training_loss(const DiTModel<float>& model, const NoiseSchedule& schedule,
                      const ConditionedSequence& seq, const VideoTensor& x0_person, std::size_t t,
                      const VideoTensor& eps, bool use_pose = true);

/// MSE restricted to the person rows of a token-level prediction
/// [(G+T)·ppf, Cp²] against the patchified person noise.
Tensorf person_token_mse(const Tensorf& prediction, const Tensorf& eps_tokens,
                         std::size_t garment_tokens);

}  // namespace catv2ton
