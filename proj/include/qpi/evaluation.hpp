#pragma once

// Regression metrics over inferred kernels, per-split evaluation of the
// three methods, and latent export.

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qpi/dataset.hpp"
#include "qpi/deconv.hpp"
#include "qpi/error.hpp"
#include "qpi/models.hpp"
#include "qpi/parallel.hpp"
#include "qpi/training.hpp"

namespace qpi {

enum class Method { two_step, one_step, deconv };

inline const char* to_string(Method m) {
  switch (m) {
  case Method::two_step: return "two_step";
  case Method::one_step: return "one_step";
  case Method::deconv: return "deconv";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "two_step") return Method::two_step;
  if (s == "one_step") return Method::one_step;
  if (s == "deconv") return Method::deconv;
  throw InvalidArgument("unknown method '" + s + "' (expected two_step, one_step or deconv)");
}

struct MetricsRecord {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;  // images
  std::string split;
  std::string method;
};

namespace detail {

// Neumaier compensated sum; keeps pooled metrics insensitive to ordering.
class CompensatedSum {
public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

} // namespace detail

struct ImageError {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

inline ImageError image_error(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "metrics");
  detail::CompensatedSum abs_sum, sq_sum;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.storage()[i] - target.storage()[i];
    abs_sum.add(std::abs(d));
    sq_sum.add(d * d);
  }
  const double n = static_cast<double>(pred.size());
  ImageError e{abs_sum.value() / n, sq_sum.value() / n, 0.0};
  e.rmse = std::sqrt(e.mse);
  return e;
}

// Pixel-pooled by default: every pixel of every pair weighs the same. With
// per_image, metrics are computed per pair and averaged (RMSE then stays
// sqrt of the averaged MSE).
inline MetricsRecord compute_metrics(const std::vector<Image>& preds, const std::vector<Image>& targets,
                                     bool per_image = false) {
  if (preds.empty()) throw InvalidArgument("compute_metrics: empty prediction list");
  if (preds.size() != targets.size()) throw DimensionError("compute_metrics: list lengths differ");
  detail::CompensatedSum abs_sum, sq_sum;
  double pixels = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    require_same_shape(preds[k], targets[k], "compute_metrics");
    if (!preds[k].same_shape(preds[0])) throw DimensionError("compute_metrics: images differ in size");
    if (per_image) {
      const auto e = image_error(preds[k], targets[k]);
      abs_sum.add(e.mae);
      sq_sum.add(e.mse);
      pixels += 1.0;
      continue;
    }
    for (std::size_t i = 0; i < preds[k].size(); ++i) {
      const double d = preds[k].storage()[i] - targets[k].storage()[i];
      abs_sum.add(std::abs(d));
      sq_sum.add(d * d);
    }
    pixels += static_cast<double>(preds[k].size());
  }
  MetricsRecord m;
  m.mae = abs_sum.value() / pixels;
  m.mse = sq_sum.value() / pixels;
  m.rmse = std::sqrt(m.mse);
  m.count = preds.size();
  return m;
}

struct SampleMetrics {
  int kernel_id = 0;
  int sample_id = 0;
  ImageError error;
};

struct Evaluation {
  MetricsRecord summary;
  std::vector<SampleMetrics> rows;
};

struct EvalOptions {
  bool per_image = false;
  TikhonovConfig tikhonov;
  int deconv_observations = 10;
  int deconv_support = kImageSize;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// For learned methods `model` must hold encoder_y and decoder_k. Deconv
// recovers one kernel per kernel id from the first deconv_observations
// samples of that kernel in the split and scores it against every sample.
inline Evaluation evaluate_model(Method method, const ModelBundle* model, const Dataset& ds, SampleSplit split,
                                 const EvalOptions& opt = {}) {
  const auto samples = ds.split(split);
  if (samples.empty()) throw InvalidArgument(std::string("split ") + to_string(split) + " has no samples");
  std::vector<Image> preds(samples.size()), targets(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) targets[i] = ds.kernel(samples[i]->kernel_id).image;

  if (method == Method::deconv) {
    std::map<int, std::vector<std::size_t>> by_kernel;
    for (std::size_t i = 0; i < samples.size(); ++i) by_kernel[samples[i]->kernel_id].push_back(i);
    std::vector<std::pair<int, std::vector<std::size_t>>> groups(by_kernel.begin(), by_kernel.end());
    parallel_for(groups.size(), [&](std::size_t g) {
      const auto& members = groups[g].second;
      const std::size_t n = std::min<std::size_t>(members.size(), static_cast<std::size_t>(opt.deconv_observations));
      std::vector<std::vector<PixelCoord>> maps;
      std::vector<Image> obs;
      for (std::size_t j = 0; j < n; ++j) {
        maps.push_back(samples[members[j]]->defects);
        obs.push_back(samples[members[j]]->observation_image());
      }
      const auto op = make_forward_operator(std::move(maps), opt.deconv_support);
      auto res = solve_tikhonov_cg(op, obs, opt.tikhonov);
      const Image est = opt.deconv_support == kImageSize ? res.kernel : center_crop(res.kernel);
      for (auto i : members) preds[i] = est;
    });
  } else {
    if (!model || !model->encoder_y || !model->decoder_k)
      throw InvalidArgument(std::string(to_string(method)) + " evaluation needs encoder_y and decoder_k");
    parallel_for(samples.size(), [&](std::size_t i) {
      preds[i] = infer_kernel(*model, samples[i]->observation_image(), samples[i]->activation_image());
    });
  }

  Evaluation ev;
  ev.summary = compute_metrics(preds, targets, opt.per_image);
  ev.summary.split = to_string(split);
  ev.summary.method = to_string(method);
  for (std::size_t i = 0; i < samples.size(); ++i)
    ev.rows.push_back({samples[i]->kernel_id, samples[i]->id, image_error(preds[i], targets[i])});
  return ev;
}

inline std::string per_sample_csv(const Evaluation& ev) {
  std::string s = "kernel_id,sample_id,mae,mse,rmse\n";
  for (const auto& r : ev.rows)
    s += std::to_string(r.kernel_id) + "," + std::to_string(r.sample_id) + "," + format_double(r.error.mae) + "," +
         format_double(r.error.mse) + "," + format_double(r.error.rmse) + "\n";
  return s;
}

// Plain-text table: one row per (split, method).
inline std::string summary_table(const std::vector<MetricsRecord>& records) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-10s %10s %10s %10s %8s\n", "setting", "method", "MAE", "MSE", "RMSE", "n");
  s += buf;
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%-10s %-10s %10.4f %10.4f %10.4f %8zu\n", r.split.c_str(), r.method.c_str(),
                  r.mae, r.mse, r.rmse, r.count);
    s += buf;
  }
  return s;
}

// Flattened mean latents. With the kernel encoder there is one row per
// kernel of the kernel split (train/id_test -> train kernels, ood_test ->
// test kernels); with the observation encoder one row per sample.
inline std::string export_latents(const ModelBundle& model, const Dataset& ds, SampleSplit split,
                                  bool use_observation_encoder) {
  std::ostringstream out;
  out.precision(17);
  const int width = model.arch.latent_channels * model.arch.latent_side() * model.arch.latent_side();
  if (!use_observation_encoder) {
    if (!model.encoder_k) throw InvalidArgument("checkpoint has no kernel encoder");
    const KernelSplit ks = split == SampleSplit::ood_test ? KernelSplit::test : KernelSplit::train;
    out << "kernel_id,fold_count";
    for (int i = 0; i < width; ++i) out << ",z" << i;
    out << '\n';
    for (const auto* k : ds.kernels_in(ks)) {
      const auto code = encode_kernel(*model.encoder_k, k->image);
      out << k->id << ',' << k->params.fold_count;
      for (double v : code.mean.values) out << ',' << v;
      out << '\n';
    }
    return out.str();
  }
  if (!model.encoder_y) throw InvalidArgument("checkpoint has no observation encoder");
  out << "kernel_id,sample_id,fold_count";
  for (int i = 0; i < width; ++i) out << ",z" << i;
  out << '\n';
  for (const auto* s : ds.split(split)) {
    const auto code = encode_observation(*model.encoder_y, s->observation_image(), s->activation_image());
    out << s->kernel_id << ',' << s->id << ',' << ds.kernel(s->kernel_id).params.fold_count;
    for (double v : code.mean.values) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

} // namespace qpi
