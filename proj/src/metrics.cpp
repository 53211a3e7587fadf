#include "catv2ton/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>

namespace catv2ton {

namespace {

void require_same_shape(const VideoTensor& a, const VideoTensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  const double c = static_cast<double>(kSsimWindow / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

std::vector<double> plane(const VideoTensor& v, std::size_t t, std::size_t c) {
  const std::size_t n = v.plane_size();
  const auto begin = v.values().begin() + static_cast<std::ptrdiff_t>((t * v.channels() + c) * n);
  return {begin, begin + static_cast<std::ptrdiff_t>(n)};
}

double frame_abs_diff(const VideoTensor& v, std::size_t t) {
  const std::size_t n = v.frame_size();
  const auto& d = v.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(d[t * n + i]) - d[(t - 1) * n + i]);
  return acc / static_cast<double>(n);
}

}  // namespace

VideoTensor to_unit_range(const VideoTensor& v) {
  VideoTensor out = v;
  for (auto& x : out.values()) x = std::clamp((x + 1.0f) * 0.5f, 0.0f, 1.0f);
  return out;
}

std::vector<double> ssim_map(const std::vector<double>& a, const std::vector<double>& b,
                             std::size_t height, std::size_t width) {
  if (a.size() != height * width || b.size() != a.size()) throw ContractError("ssim: plane size mismatch");
  if (height < kSsimWindow || width < kSsimWindow) {
    throw ContractError("ssim: image smaller than the 11x11 window");
  }
  static const std::vector<double> g = gaussian_window();
  const std::size_t oh = height - kSsimWindow + 1, ow = width - kSsimWindow + 1;
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) {
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          const double w = g[i] * g[j];
          const double va = a[(y + i) * width + x + j];
          const double vb = b[(y + i) * width + x + j];
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      out[y * ow + x] = ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
                        ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
    }
  }
  return out;
}

double ssim(const VideoTensor& a, const VideoTensor& b) {
  require_same_shape(a, b, "ssim");
  double total = 0.0;
  for (std::size_t t = 0; t < a.frames(); ++t) {
    for (std::size_t c = 0; c < a.channels(); ++c) {
      const auto m = ssim_map(plane(a, t, c), plane(b, t, c), a.height(), a.width());
      double s = 0.0;
      for (double v : m) s += v;
      total += s / static_cast<double>(m.size());
    }
  }
  return total / static_cast<double>(a.frames() * a.channels());
}

double masked_ssim(const VideoTensor& a, const VideoTensor& b, const VideoTensor& mask) {
  require_same_shape(a, b, "masked_ssim");
  if (mask.frames() != a.frames() || mask.channels() != 1 || mask.height() != a.height() ||
      mask.width() != a.width()) {
    throw ContractError("masked_ssim: mask shape " + shape_str(mask.shape()) + " vs " + shape_str(a.shape()));
  }
  const std::size_t half = kSsimWindow / 2;
  const std::size_t ow = a.width() - kSsimWindow + 1;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < a.frames(); ++t) {
    for (std::size_t c = 0; c < a.channels(); ++c) {
      const auto m = ssim_map(plane(a, t, c), plane(b, t, c), a.height(), a.width());
      for (std::size_t k = 0; k < m.size(); ++k) {
        const std::size_t y = k / ow + half, x = k % ow + half;
        if (mask.at(t, 0, y, x) >= 0.5f) {
          total += m[k];
          ++count;
        }
      }
    }
  }
  if (count == 0) return ssim(a, b);
  return total / static_cast<double>(count);
}

double psnr(const VideoTensor& a, const VideoTensor& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double d = static_cast<double>(a.values()[i]) - b.values()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.values().size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double temporal_flicker(const VideoTensor& video) {
  if (video.frames() < 2) throw ContractError("temporal_flicker: need at least 2 frames");
  double total = 0.0;
  for (std::size_t t = 1; t < video.frames(); ++t) total += frame_abs_diff(video, t);
  return total / static_cast<double>(video.frames() - 1);
}

double seam_discontinuity(const VideoTensor& video, const ClipPlan& plan) {
  if (plan.windows.size() < 2) throw ContractError("seam_discontinuity: plan has a single window");
  if (plan.total_frames != video.frames()) {
    throw ContractError("seam_discontinuity: plan covers " + std::to_string(plan.total_frames) +
                        " frames, video has " + std::to_string(video.frames()));
  }
  std::vector<bool> is_seam(video.frames(), false);
  for (std::size_t i = 1; i < plan.windows.size(); ++i) {
    const std::size_t b = plan.windows[i].start + plan.windows[i].prompt_count;
    if (b >= 1 && b < video.frames()) is_seam[b] = true;
  }
  double seam_sum = 0.0;
  std::size_t seams = 0;
  std::vector<double> within;
  for (std::size_t t = 1; t < video.frames(); ++t) {
    const double d = frame_abs_diff(video, t);
    if (is_seam[t]) {
      seam_sum += d;
      ++seams;
    } else {
      within.push_back(d);
    }
  }
  if (seams == 0) throw ContractError("seam_discontinuity: no seam inside the video");
  const double seam_mean = seam_sum / static_cast<double>(seams);
  double median = 0.0;
  if (!within.empty()) {
    std::sort(within.begin(), within.end());
    const std::size_t n = within.size();
    median = n % 2 ? within[n / 2] : 0.5 * (within[n / 2 - 1] + within[n / 2]);
  }
  if (median == 0.0) return seam_mean == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return seam_mean / median;
}

EvalRow evaluate_sample(const std::string& id, const VideoTensor& output, const VideoTensor& truth,
                        const VideoTensor& mask) {
  const VideoTensor a = to_unit_range(output);
  const VideoTensor b = to_unit_range(truth);
  EvalRow row;
  row.id = id;
  row.ssim = ssim(a, b);
  row.masked_ssim = masked_ssim(a, b, mask);
  row.psnr = psnr(a, b);
  if (output.frames() >= 2) row.flicker = temporal_flicker(a);
  return row;
}

std::map<std::string, double> EvalReport::aggregate() const {
  std::map<std::string, double> sum;
  std::map<std::string, std::size_t> count;
  auto add = [&](const std::string& k, double v) {
    sum[k] += v;
    count[k] += 1;
  };
  for (const auto& r : rows) {
    add("ssim", r.ssim);
    add("masked_ssim", r.masked_ssim);
    add("psnr", r.psnr);
    if (r.flicker) add("flicker", *r.flicker);
    for (const auto& [k, v] : r.external) add(k, v);
  }
  for (auto& [k, v] : sum) v /= static_cast<double>(count[k]);
  return sum;
}

namespace {

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::json::parse(config_json);
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["id"] = r.id;
    e["ssim"] = number(r.ssim);
    e["masked_ssim"] = number(r.masked_ssim);
    e["psnr"] = number(r.psnr);
    e["flicker"] = r.flicker ? number(*r.flicker) : nlohmann::json(nullptr);
    for (const auto& [k, v] : r.external) e[k] = number(v);
    j["samples"].push_back(e);
  }
  nlohmann::ordered_json agg;
  for (const auto& [k, v] : aggregate()) agg[k] = number(v);
  j["aggregate"] = agg;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "id,ssim,masked_ssim,psnr,flicker\n";
  for (const auto& r : rows) {
    os << r.id << ',' << r.ssim << ',' << r.masked_ssim << ',' << r.psnr << ',';
    if (r.flicker) os << *r.flicker;
    os << '\n';
  }
  if (rows.empty()) return os.str();
  const auto agg = aggregate();
  os << "mean," << agg.at("ssim") << ',' << agg.at("masked_ssim") << ',' << agg.at("psnr") << ',';
  if (agg.count("flicker")) os << agg.at("flicker");
  os << '\n';
  return os.str();
}

}  // namespace catv2ton
