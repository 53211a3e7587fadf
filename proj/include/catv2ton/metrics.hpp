#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "catv2ton/clipstream.hpp"
#include "catv2ton/conditioning.hpp"

namespace catv2ton {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Maps imagery from [-1, 1] to [0, 1], clamping stray values.
VideoTensor to_unit_range(const VideoTensor& v);

/// SSIM map of one channel (row-major, valid region only:
/// (H-10) x (W-10) entries). Inputs are H*W planes in [0, 1].
std::vector<double> ssim_map(const std::vector<double>& a, const std::vector<double>& b,
                             std::size_t height, std::size_t width);

/// Mean SSIM averaged over channels and frames. Values expected in [0, 1].
double ssim(const VideoTensor& a, const VideoTensor& b);

/// Mean of the SSIM map over window centers lying inside `mask`
/// ([T,1,H,W], binary). Falls back to plain SSIM when no center qualifies.
double masked_ssim(const VideoTensor& a, const VideoTensor& b, const VideoTensor& mask);

/// 10·log10(1/MSE) on [0, 1] data; +inf for identical inputs.
double psnr(const VideoTensor& a, const VideoTensor& b);

/// Mean over t >= 1 of mean |f_t - f_{t-1}|.
double temporal_flicker(const VideoTensor& video);

/// Mean seam jump divided by the median within-clip frame difference.
/// Seams are the first non-prompt frame of every window after the first.
double seam_discontinuity(const VideoTensor& video, const ClipPlan& plan);

struct EvalRow {
  std::string id;
  double ssim = 0.0;
  double masked_ssim = 0.0;
  double psnr = 0.0;
  std::optional<double> flicker;
  std::map<std::string, double> external;  // slots for metrics computed elsewhere
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_json = "{}";

  /// Arithmetic mean of each metric over the rows that carry it.
  std::map<std::string, double> aggregate() const;
  std::string to_json() const;
  std::string to_csv() const;
};

/// All metrics for one output video vs ground truth, both in [-1, 1].
EvalRow evaluate_sample(const std::string& id, const VideoTensor& output, const VideoTensor& truth,
                        const VideoTensor& mask);

}  // namespace catv2ton
