#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "qpi/diffnet/layers.hpp"
#include "qpi/diffnet/tensor.hpp"
#include "qpi/rng.hpp"

namespace qpi::diffnet {

using Tape = std::vector<LayerContext>;

// Feed-forward chain of layers owning an ordered, named parameter list.
class Sequential {
public:
  Sequential() = default;

  Sequential& conv(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int padding) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.weight_index = params_.size();
    params_.push_back({name + ".weight", Tensor({out_ch, in_ch, kernel, kernel}), false});
    s.bias_index = params_.size();
    params_.push_back({name + ".bias", Tensor({out_ch}), false});
    layers_.push_back(s);
    return *this;
  }

  Sequential& silu() {
    layers_.push_back({LayerKind::silu});
    return *this;
  }

  Sequential& upsample2x() {
    layers_.push_back({LayerKind::upsample2x_nearest});
    return *this;
  }

  // Centered uniform fan-in initialisation, bound sqrt(6 / fan_in); zero biases.
  void initialize(Rng& rng) {
    for (const auto& l : layers_) {
      if (l.kind != LayerKind::conv2d) continue;
      auto& w = params_[l.weight_index].value;
      const double bound = std::sqrt(6.0 / (l.in_channels * l.kernel * l.kernel));
      for (double& v : w.values) v = rng.uniform(-bound, bound);
      params_[l.bias_index].value.fill(0.0);
    }
  }

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void set_frozen(bool frozen) {
    for (auto& p : params_) p.frozen = frozen;
  }

  bool frozen() const {
    return std::all_of(params_.begin(), params_.end(), [](const Param& p) { return p.frozen; });
  }

  Tensor forward(const Tensor& x, Tape* tape = nullptr) const {
    // Tapes are reused across calls so the large im2col buffers keep their
    // allocation.
    if (tape && tape->size() != layers_.size()) tape->resize(layers_.size());
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      LayerContext* ctx = tape ? &(*tape)[i] : nullptr;
      switch (l.kind) {
      case LayerKind::conv2d:
        cur = conv2d_forward(l, params_[l.weight_index].value, params_[l.bias_index].value, cur, ctx);
        break;
      case LayerKind::silu: cur = silu_forward(cur, ctx); break;
      case LayerKind::upsample2x_nearest: cur = upsample2x_forward(cur, ctx); break;
      }
    }
    return cur;
  }

  // Accumulates parameter gradients into `grads` (aligned with params()).
  // Frozen blocks are left untouched. Returns dL/dx when requested.
  Tensor backward(const Tape& tape, Tensor grad, Gradients& grads, bool need_input_grad = false) const {
    if (tape.size() != layers_.size()) throw DimensionError("tape does not match network");
    if (grads.size() != params_.size()) throw DimensionError("gradient set does not match network");
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const auto& l = layers_[i];
      const bool want_input = need_input_grad || i > 0;
      switch (l.kind) {
      case LayerKind::conv2d: {
        Tensor* dw = params_[l.weight_index].frozen ? nullptr : &grads[l.weight_index];
        Tensor* db = params_[l.bias_index].frozen ? nullptr : &grads[l.bias_index];
        grad = conv2d_backward(l, params_[l.weight_index].value, tape[i], grad, dw, db, want_input);
        break;
      }
      case LayerKind::silu: grad = silu_backward(tape[i], grad); break;
      case LayerKind::upsample2x_nearest: grad = upsample2x_backward(tape[i], grad); break;
      }
      if (!want_input) break;
    }
    return grad;
  }

  friend bool operator==(const Sequential& a, const Sequential& b) {
    if (a.params_ != b.params_ || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto &x = a.layers_[i], &y = b.layers_[i];
      if (x.kind != y.kind || x.kernel != y.kernel || x.stride != y.stride || x.padding != y.padding ||
          x.in_channels != y.in_channels || x.out_channels != y.out_channels)
        return false;
    }
    return true;
  }

private:
  std::vector<LayerSpec> layers_;
  std::vector<Param> params_;
};

} // namespace qpi::diffnet
