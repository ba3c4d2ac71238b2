#pragma once

// Parameterized building blocks and the Adam optimizer.

#include <cmath>
#include <string>
#include <vector>

#include "sbir/autograd.hpp"
#include "sbir/ops.hpp"
#include "sbir/rng.hpp"

namespace sbir::nn {

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

inline Var init_param(Shape shape, int fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
  std::vector<double> v(numel(shape));
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  for (double& x : v) x = normal(rng, 0.0, stddev);
  return Var::parameter(std::move(shape), std::move(v));
}

inline Var zero_param(Shape shape) { return Var::parameter(shape, std::vector<double>(numel(shape), 0.0)); }

struct Linear {
  Var weight;  // [out, in]
  Var bias;    // [out]

  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = 1.0, bool with_bias = true)
      : weight(init_param({out, in}, in, rng, gain)), bias(with_bias ? zero_param({out}) : Var()) {}

  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

struct Conv2d {
  Var weight;  // [co, ci, kh, kw]
  Var bias;    // [co]
  int stride = 1, pad_h = 0, pad_w = 0;

  Conv2d() = default;
  Conv2d(int ci, int co, int kh, int kw, int stride_, int pad_h_, int pad_w_, Rng& rng, double gain = std::sqrt(2.0),
         bool with_bias = true)
      : weight(init_param({co, ci, kh, kw}, ci * kh * kw, rng, gain)),
        bias(with_bias ? zero_param({co}) : Var()),
        stride(stride_),
        pad_h(pad_h_),
        pad_w(pad_w_) {}

  Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, pad_h, pad_w); }
  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

// Stack of 3x3 stride-2 convolutions, each followed by a (leaky) ReLU. Each
// block halves the spatial size.
struct ConvStack {
  std::vector<Conv2d> blocks;
  double slope = 0.0;

  ConvStack() = default;
  ConvStack(int in_channels, const std::vector<int>& widths, Rng& rng, double slope_ = 0.0) : slope(slope_) {
    int c = in_channels;
    for (int w : widths) {
      blocks.emplace_back(c, w, 3, 3, 2, 1, 1, rng);
      c = w;
    }
  }

  Var operator()(Var x) const {
    for (const auto& b : blocks) x = slope > 0.0 ? ops::leaky_relu(b(x), slope) : ops::relu(b(x));
    return x;
  }
  int out_channels() const { return blocks.empty() ? 0 : blocks.back().weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "." + std::to_string(i), out);
  }
};

inline std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

inline void zero_grad(const ParamList& params) {
  for (const auto& p : params) std::vector<double>().swap(p.var.node().grad);
}

// Flat snapshot of all parameter values, in list order.
inline std::vector<double> flatten_values(const ParamList& params) {
  std::vector<double> out;
  out.reserve(parameter_count(params));
  for (const auto& p : params) out.insert(out.end(), p.var.value().begin(), p.var.value().end());
  return out;
}

// Adam with bias correction. Parameters whose gradient buffer was never
// touched since the last step are skipped entirely (moments untouched).
class Adam {
 public:
  struct State {
    std::vector<double> m, v;
    long long t = 0;
  };

  double lr, beta1, beta2, eps;

  explicit Adam(ParamList params, double lr_ = 1e-4, double beta1_ = 0.9, double beta2_ = 0.999, double eps_ = 1e-8)
      : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_), params_(std::move(params)), state_(params_.size()) {}

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Node& n = params_[k].var.node();
      if (n.grad.empty()) continue;
      State& s = state_[k];
      if (s.m.empty()) {
        s.m.assign(n.value.size(), 0.0);
        s.v.assign(n.value.size(), 0.0);
      }
      ++s.t;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
      for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double g = n.grad[i];
        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
        n.value[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
      }
      std::vector<double>().swap(n.grad);
    }
  }

  void zero_grad() { nn::zero_grad(params_); }
  const ParamList& params() const { return params_; }
  std::vector<State>& states() { return state_; }
  const std::vector<State>& states() const { return state_; }

 private:
  ParamList params_;
  std::vector<State> state_;
};

}  // namespace sbir::nn
