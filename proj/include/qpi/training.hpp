#pragma once

// Training loops: kernel autoencoder (step 1), observation-encoder alignment
// against the frozen kernel encoder (step 2), the direct one-step baseline,
// and two-step inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "qpi/dataset.hpp"
#include "qpi/diffnet/adam.hpp"
#include "qpi/diffnet/checkpoint.hpp"
#include "qpi/diffnet/network.hpp"
#include "qpi/error.hpp"
#include "qpi/losses.hpp"
#include "qpi/models.hpp"
#include "qpi/parallel.hpp"
#include "qpi/rng.hpp"

namespace qpi {

enum class TrainMode { step1, step2, onestep };

inline const char* to_string(TrainMode m) {
  switch (m) {
  case TrainMode::step1: return "step1";
  case TrainMode::step2: return "step2";
  case TrainMode::onestep: return "onestep";
  }
  return "?";
}

inline int max_epochs(TrainMode m) { return m == TrainMode::step1 || m == TrainMode::onestep ? 350 : 40; }

enum class EncoderInit { from_kernel, random };

struct TrainConfig {
  TrainMode mode = TrainMode::step1;
  int epochs = 350;
  int batch_size = 8;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  Step1Weights loss;
  int patience = 0;  // epochs without validation improvement before stopping; 0 disables
  double validation_fraction = 0.1;
  bool sample_latent = true;
  EncoderInit encoder_y_init = EncoderInit::from_kernel;
  Architecture arch;

  void validate() const {
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (loss.alpha < 0.0) throw ConfigError("alpha must be non-negative");
    if (loss.beta < 0.0) throw ConfigError("beta must be non-negative");
    if (patience < 0) throw ConfigError("patience must be non-negative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must lie in [0, 1)");
    arch.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  std::optional<double> mse;
  std::optional<double> sym;
};

struct TrainResult {
  ModelBundle model;  // best-by-validation snapshot
  diffnet::AdamState optimizer;
  std::vector<EpochRecord> log;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_validation = std::numeric_limits<double>::infinity();
};

inline std::string metrics_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,split,loss,mse,sym\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.split << ',' << r.loss << ',';
    if (r.mse) out << *r.mse;
    out << ',';
    if (r.sym) out << *r.sym;
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Single-example passes, shared by the training loops and the gradient check.

struct AutoencoderPass {
  Step1LossParts parts;
  Image recon;
};

struct Workspace {
  diffnet::Tape encoder_tape;
  diffnet::Tape decoder_tape;
};

// Encoder -> (optional reparameterisation) -> decoder with the composite
// loss. When gradient sets are given, accumulates dL/dparams into them.
inline AutoencoderPass autoencoder_pass(const Sequential& encoder, const Sequential& decoder, const Tensor& input,
                                        const Image& target, int fold_count, const Step1Weights& w, Rng* noise,
                                        diffnet::Gradients* enc_grads, diffnet::Gradients* dec_grads,
                                        Workspace* ws = nullptr) {
  Workspace local;
  Workspace& wk = ws ? *ws : local;
  const bool backprop = enc_grads || dec_grads;
  const Tensor head = encoder.forward(input, backprop ? &wk.encoder_tape : nullptr);
  auto [mean, logvar] = diffnet::split_latent(head);
  std::optional<diffnet::Reparameterized> rep;
  if (noise) rep = diffnet::reparameterize(mean, logvar, *noise);
  const Tensor& z = rep ? rep->z : mean;
  const Tensor out = decoder.forward(z, backprop ? &wk.decoder_tape : nullptr);
  AutoencoderPass pass;
  pass.recon = tensor_image(out);

  Image dmse, dsym;
  const double mse = backprop ? loss_mse_grad(pass.recon, target, dmse) : loss_mse(pass.recon, target);
  double sym = 0.0;
  if (w.alpha != 0.0)
    sym = loss_sym_grad(pass.recon, target, fold_count, backprop ? &dsym : nullptr, w.fold_for_total_symmetry);
  Tensor dkl_mean, dkl_logvar;
  double kl = 0.0;
  if (w.beta != 0.0)
    kl = kl_divergence(mean, logvar, backprop ? &dkl_mean : nullptr, backprop ? &dkl_logvar : nullptr);
  pass.parts = combine_step1(mse, sym, kl, w);
  if (!backprop) return pass;

  Tensor drecon({1, target.height(), target.width()});
  for (std::size_t i = 0; i < drecon.size(); ++i) {
    drecon.values[i] = dmse.storage()[i];
    if (w.alpha != 0.0) drecon.values[i] += w.alpha * dsym.storage()[i];
  }
  diffnet::Gradients scratch_dec;
  if (!dec_grads) scratch_dec = diffnet::zero_gradients(decoder.params());
  const Tensor dz = decoder.backward(wk.decoder_tape, drecon, dec_grads ? *dec_grads : scratch_dec, true);
  if (!enc_grads) return pass;

  Tensor dmean = dz, dlogvar(logvar.dims);
  if (rep) std::tie(dmean, dlogvar) = diffnet::reparameterize_backward(logvar, rep->noise, dz);
  if (w.beta != 0.0)
    for (std::size_t i = 0; i < dmean.size(); ++i) {
      dmean.values[i] += w.beta * dkl_mean.values[i];
      dlogvar.values[i] += w.beta * dkl_logvar.values[i];
    }
  encoder.backward(wk.encoder_tape, diffnet::merge_latent(dmean, dlogvar), *enc_grads);
  return pass;
}

// Observation encoder output aligned to a fixed target latent.
inline double alignment_pass(const Sequential& encoder, const Tensor& input, const Tensor& target_mean,
                             diffnet::Gradients* grads, Workspace* ws = nullptr) {
  Workspace local;
  Workspace& wk = ws ? *ws : local;
  const Tensor head = encoder.forward(input, grads ? &wk.encoder_tape : nullptr);
  auto [mean, logvar] = diffnet::split_latent(head);
  Tensor dmean;
  const double loss = loss_align(mean, target_mean, grads ? &dmean : nullptr);
  if (grads) encoder.backward(wk.encoder_tape, diffnet::merge_latent(dmean, Tensor(logvar.dims)), *grads);
  return loss;
}

inline Image infer_kernel(const Sequential& observation_encoder, const Sequential& kernel_decoder, const Image& obs,
                          const Image& map) {
  return decode_kernel(kernel_decoder, encode_observation(observation_encoder, obs, map));
}

// Two-step inference from a bundle: Encoder_y then Decoder_K. The kernel
// encoder is never touched.
inline Image infer_kernel(const ModelBundle& b, const Image& obs, const Image& map) {
  if (!b.encoder_y || !b.decoder_k) throw InvalidArgument("inference needs an observation encoder and a decoder");
  return infer_kernel(*b.encoder_y, *b.decoder_k, obs, map);
}

// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::uint64_t kInitStream = 0x494E4954ull;
inline constexpr std::uint64_t kPermStream = 0x5045524Dull;
inline constexpr std::uint64_t kNoiseStream = 0x4E4F4953ull;
inline constexpr std::uint64_t kValStream = 0x56414C44ull;

inline std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kPermStream, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
  return order;
}

inline void split_validation(std::uint64_t seed, std::size_t n, double fraction, std::vector<std::size_t>& train,
                             std::vector<std::size_t>& val) {
  int keep = n >= 2 ? static_cast<int>(std::llround(fraction * static_cast<double>(n))) : 0;
  if (fraction > 0.0 && n >= 2) keep = std::max(keep, 1);
  const auto flag = seeded_selection(derive_seed(seed, kValStream), static_cast<int>(n), keep);
  for (std::size_t i = 0; i < n; ++i) (flag[i] ? val : train).push_back(i);
}

inline void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw TrainingError("non-finite loss " + std::to_string(v) + " at " + where);
}

// Parameter view over one or two networks so a single Adam state can drive
// them. Trainable sets are concatenated in order.
struct ParamGroup {
  std::vector<Sequential*> nets;

  std::vector<diffnet::Param> gather() const {
    std::vector<diffnet::Param> all;
    for (auto* n : nets) all.insert(all.end(), n->params().begin(), n->params().end());
    return all;
  }
  void scatter(const std::vector<diffnet::Param>& all) {
    std::size_t k = 0;
    for (auto* n : nets)
      for (auto& p : n->params()) p.value = all[k++].value;
  }
};

inline std::vector<diffnet::OptimizerEntry> optimizer_entries(const diffnet::AdamState& st,
                                                             const std::vector<std::pair<std::string, Sequential*>>& nets) {
  std::vector<diffnet::OptimizerEntry> out;
  std::size_t k = 0;
  for (const auto& [name, net] : nets)
    for (const auto& p : net->params()) {
      out.push_back({name + "/" + p.name, st.first_moment[k], st.second_moment[k]});
      ++k;
    }
  return out;
}

} // namespace detail

inline diffnet::Checkpoint result_checkpoint(const TrainResult& r, TrainMode mode) {
  auto ck = to_checkpoint(r.model);
  ModelBundle copy = r.model;
  std::vector<std::pair<std::string, Sequential*>> trained;
  if (mode == TrainMode::step1) trained = {{kEncoderK, &*copy.encoder_k}, {kDecoderK, &*copy.decoder_k}};
  if (mode == TrainMode::step2) trained = {{kEncoderY, &*copy.encoder_y}};
  if (mode == TrainMode::onestep) trained = {{kEncoderY, &*copy.encoder_y}, {kDecoderK, &*copy.decoder_k}};
  diffnet::OptimizerSection o;
  o.learning_rate = r.optimizer.learning_rate;
  o.beta1 = r.optimizer.beta1;
  o.beta2 = r.optimizer.beta2;
  o.epsilon = r.optimizer.epsilon;
  o.step = r.optimizer.step;
  o.entries = detail::optimizer_entries(r.optimizer, trained);
  ck.optimizer = std::move(o);
  return ck;
}

namespace detail {

// Shared minibatch loop. `run_example` computes one example's loss parts and
// accumulates its gradients; `validate` returns the validation loss.
template <typename RunExample, typename Validate>
void run_training(const TrainConfig& cfg, ParamGroup group, std::size_t n_train, RunExample&& run_example,
                  Validate&& validate, TrainResult& result, const std::function<void()>& snapshot,
                  bool report_parts) {
  auto params = group.gather();
  result.optimizer = diffnet::AdamState::for_params(params, cfg.learning_rate);
  diffnet::AdamState best_opt = result.optimizer;
  int since_best = 0;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Workspace> workspaces(batch);
  std::vector<std::vector<diffnet::Gradients>> item_grads(batch);
  std::vector<Step1LossParts> item_parts(batch);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(cfg.seed, epoch, n_train);
    double sum_loss = 0.0, sum_mse = 0.0, sum_sym = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t count = std::min(batch, n_train - start);
      parallel_for(count, [&](std::size_t i) {
        item_grads[i].clear();
        for (auto* net : group.nets) item_grads[i].push_back(diffnet::zero_gradients(net->params()));
        Rng noise(derive_seed(derive_seed(cfg.seed, kNoiseStream, static_cast<std::uint64_t>(epoch)),
                              static_cast<std::uint64_t>(batches), i));
        item_parts[i] = run_example(order[start + i], noise, item_grads[i], workspaces[i]);
      });
      // Fixed-order reduction.
      diffnet::Gradients total;
      for (std::size_t g = 0; g < group.nets.size(); ++g) {
        diffnet::Gradients acc = item_grads[0][g];
        for (std::size_t i = 1; i < count; ++i) diffnet::accumulate(acc, item_grads[i][g]);
        total.insert(total.end(), acc.begin(), acc.end());
      }
      double bl = 0.0, bm = 0.0, bs = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        bl += item_parts[i].total;
        bm += item_parts[i].mse;
        bs += item_parts[i].sym;
      }
      const double inv = 1.0 / static_cast<double>(count);
      check_finite(bl, "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches));
      for (auto& t : total) diffnet::scale(t, inv);
      params = group.gather();
      diffnet::adam_update(result.optimizer, params, total);
      group.scatter(params);
      sum_loss += bl * inv;
      sum_mse += bm * inv;
      sum_sym += bs * inv;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    EpochRecord tr{epoch, "train", sum_loss / nb, std::nullopt, std::nullopt};
    if (report_parts) {
      tr.mse = sum_mse / nb;
      tr.sym = sum_sym / nb;
    }
    result.log.push_back(tr);
    const auto [val_loss, has_val] = validate();
    const double monitored = has_val ? val_loss : tr.loss;
    check_finite(monitored, "validation after epoch " + std::to_string(epoch));
    if (has_val) result.log.push_back({epoch, "val", val_loss, report_parts ? std::optional(val_loss) : std::nullopt, std::nullopt});
    result.epochs_run = epoch;
    if (monitored < result.best_validation) {
      result.best_validation = monitored;
      result.best_epoch = epoch;
      best_opt = result.optimizer;
      snapshot();
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  result.optimizer = best_opt;
}

} // namespace detail

// Step 1: kernel autoencoder on train-split kernels.
inline TrainResult train_step1(const Dataset& ds, TrainConfig cfg) {
  cfg.mode = TrainMode::step1;
  cfg.validate();
  const auto kernels = ds.kernels_in(KernelSplit::train);
  if (kernels.empty()) throw InvalidArgument("dataset has no train-split kernels");
  std::vector<std::size_t> train_idx, val_idx;
  detail::split_validation(cfg.seed, kernels.size(), cfg.validation_fraction, train_idx, val_idx);

  ModelBundle work = ModelBundle::create(cfg.arch, true, true, false);
  Rng init_e(derive_seed(cfg.seed, detail::kInitStream, 0)), init_d(derive_seed(cfg.seed, detail::kInitStream, 1));
  work.encoder_k->initialize(init_e);
  work.decoder_k->initialize(init_d);

  std::vector<Tensor> inputs;
  for (const auto* k : kernels) inputs.push_back(image_tensor(k->image));

  TrainResult result;
  result.model = work;
  auto run = [&](std::size_t j, Rng& noise, std::vector<diffnet::Gradients>& g, Workspace& ws) {
    const auto* k = kernels[train_idx[j]];
    return autoencoder_pass(*work.encoder_k, *work.decoder_k, inputs[train_idx[j]], k->image, k->params.fold_count,
                            cfg.loss, cfg.sample_latent ? &noise : nullptr, &g[0], &g[1], &ws)
        .parts;
  };
  auto validate = [&]() -> std::pair<double, bool> {
    if (val_idx.empty()) return {0.0, false};
    std::vector<double> losses(val_idx.size());
    parallel_for(val_idx.size(), [&](std::size_t i) {
      const Image recon = decode_kernel(*work.decoder_k, encode_kernel(*work.encoder_k, kernels[val_idx[i]]->image));
      losses[i] = loss_mse(recon, kernels[val_idx[i]]->image);
    });
    return {std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size()), true};
  };
  detail::run_training(cfg, {{&*work.encoder_k, &*work.decoder_k}}, train_idx.size(), run, validate, result,
                       [&] { result.model = work; }, true);
  return result;
}

// Freezes both step-1 networks in place.
inline ModelBundle frozen_kernel_model(ModelBundle step1) {
  if (!step1.encoder_k || !step1.decoder_k) throw InvalidArgument("step-1 checkpoint needs encoder_k and decoder_k");
  step1.encoder_k->set_frozen(true);
  step1.decoder_k->set_frozen(true);
  step1.encoder_y.reset();
  return step1;
}

// Observation encoder initialised from the kernel encoder: the single input
// channel's filters are split evenly over the (Y, M) channels.
inline Sequential observation_encoder_from_kernel(const Architecture& arch, const Sequential& encoder_k) {
  Sequential enc = make_encoder(arch, 2);
  for (std::size_t i = 0; i < enc.params().size(); ++i) {
    auto& dst = enc.params()[i].value;
    const auto& src = encoder_k.params()[i].value;
    if (dst.dims == src.dims) {
      dst = src;
      continue;
    }
    const int out = dst.dims[0], kk = dst.dims[2] * dst.dims[3];
    for (int o = 0; o < out; ++o)
      for (int c = 0; c < 2; ++c)
        for (int t = 0; t < kk; ++t)
          dst.values[static_cast<std::size_t>((o * 2 + c) * kk + t)] =
              0.5 * src.values[static_cast<std::size_t>(o * kk + t)];
  }
  return enc;
}

// Step 2: align Encoder_y(Y, M) with the frozen Encoder_K(A).
inline TrainResult train_step2(const Dataset& ds, const ModelBundle& step1, TrainConfig cfg) {
  cfg.mode = TrainMode::step2;
  cfg.validate();
  ModelBundle work = frozen_kernel_model(step1);
  if (!(work.arch == cfg.arch)) throw InvalidArgument("step-1 checkpoint architecture does not match config");
  const auto samples = ds.split(SampleSplit::train);
  if (samples.empty()) throw InvalidArgument("dataset has no train samples");

  if (cfg.encoder_y_init == EncoderInit::from_kernel) {
    work.encoder_y = observation_encoder_from_kernel(work.arch, *work.encoder_k);
  } else {
    work.encoder_y = make_encoder(work.arch, 2);
    Rng init(derive_seed(cfg.seed, detail::kInitStream, 2));
    work.encoder_y->initialize(init);
  }

  std::vector<Tensor> targets(ds.kernels.size());
  parallel_for(ds.kernels.size(), [&](std::size_t k) {
    if (ds.kernels[k].split == KernelSplit::train) targets[k] = encode_kernel(*work.encoder_k, ds.kernels[k].image).mean;
  });
  std::vector<Tensor> inputs(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    inputs[i] = observation_tensor(samples[i]->observation_image(), samples[i]->activation_image());
  });
  std::vector<std::size_t> train_idx, val_idx;
  detail::split_validation(cfg.seed, samples.size(), cfg.validation_fraction, train_idx, val_idx);

  TrainResult result;
  result.model = work;
  auto run = [&](std::size_t j, Rng&, std::vector<diffnet::Gradients>& g, Workspace& ws) {
    const std::size_t i = train_idx[j];
    Step1LossParts p;
    p.total = alignment_pass(*work.encoder_y, inputs[i], targets[static_cast<std::size_t>(samples[i]->kernel_id)], &g[0], &ws);
    return p;
  };
  auto validate = [&]() -> std::pair<double, bool> {
    if (val_idx.empty()) return {0.0, false};
    std::vector<double> losses(val_idx.size());
    parallel_for(val_idx.size(), [&](std::size_t v) {
      const std::size_t i = val_idx[v];
      losses[v] = alignment_pass(*work.encoder_y, inputs[i], targets[static_cast<std::size_t>(samples[i]->kernel_id)], nullptr);
    });
    return {std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size()), true};
  };
  detail::run_training(cfg, {{&*work.encoder_y}}, train_idx.size(), run, validate, result,
                       [&] { result.model = work; }, false);
  return result;
}

// One-step baseline: a two-channel encoder and a decoder trained jointly on
// (Y, M) -> A with the step-1 composite loss.
inline TrainResult train_onestep(const Dataset& ds, TrainConfig cfg) {
  cfg.mode = TrainMode::onestep;
  cfg.validate();
  const auto samples = ds.split(SampleSplit::train);
  if (samples.empty()) throw InvalidArgument("dataset has no train samples");
  ModelBundle work = ModelBundle::create(cfg.arch, false, true, true);
  Rng init_e(derive_seed(cfg.seed, detail::kInitStream, 2)), init_d(derive_seed(cfg.seed, detail::kInitStream, 1));
  work.encoder_y->initialize(init_e);
  work.decoder_k->initialize(init_d);

  std::vector<Tensor> inputs(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    inputs[i] = observation_tensor(samples[i]->observation_image(), samples[i]->activation_image());
  });
  std::vector<std::size_t> train_idx, val_idx;
  detail::split_validation(cfg.seed, samples.size(), cfg.validation_fraction, train_idx, val_idx);

  TrainResult result;
  result.model = work;
  auto run = [&](std::size_t j, Rng& noise, std::vector<diffnet::Gradients>& g, Workspace& ws) {
    const std::size_t i = train_idx[j];
    const auto& k = ds.kernel(samples[i]->kernel_id);
    return autoencoder_pass(*work.encoder_y, *work.decoder_k, inputs[i], k.image, k.params.fold_count, cfg.loss,
                            cfg.sample_latent ? &noise : nullptr, &g[0], &g[1], &ws)
        .parts;
  };
  auto validate = [&]() -> std::pair<double, bool> {
    if (val_idx.empty()) return {0.0, false};
    std::vector<double> losses(val_idx.size());
    parallel_for(val_idx.size(), [&](std::size_t v) {
      const std::size_t i = val_idx[v];
      const auto& k = ds.kernel(samples[i]->kernel_id);
      losses[v] = autoencoder_pass(*work.encoder_y, *work.decoder_k, inputs[i], k.image, k.params.fold_count,
                                   Step1Weights{0.0, 0.0, cfg.loss.fold_for_total_symmetry}, nullptr, nullptr, nullptr)
                      .parts.mse;
    });
    return {std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size()), true};
  };
  detail::run_training(cfg, {{&*work.encoder_y, &*work.decoder_k}}, train_idx.size(), run, validate, result,
                       [&] { result.model = work; }, true);
  return result;
}

} // namespace qpi
