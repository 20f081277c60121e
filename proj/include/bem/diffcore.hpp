#pragma once

// Two-layer perceptrons with hand-written gradients, and the Adam update.
//
//   out = W2 * relu(W1 * x + b1) + b2
//
// Everything is templated on the scalar type; the rest of the library uses
// Mlp<double> (aliased as DiffNet).

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "bem/common.hpp"

namespace bem {

template <typename Scalar>
class Mlp {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using VecMap = Eigen::Map<Vec>;
  using ConstVecMap = Eigen::Map<const Vec>;

  Mlp() = default;

  /// All-zero network.
  Mlp(Index in_dim, Index hidden_dim, Index out_dim)
      : w1_(Mat::Zero(hidden_dim, in_dim)),
        b1_(Vec::Zero(hidden_dim)),
        w2_(Mat::Zero(out_dim, hidden_dim)),
        b2_(Vec::Zero(out_dim)) {
    if (in_dim <= 0 || hidden_dim <= 0 || out_dim <= 0)
      throw ShapeError("network dimensions must be positive");
  }

  /// Uniform Glorot initialisation of both weight matrices, zero biases.
  /// Entries are drawn row by row, W1 before W2.
  static Mlp glorot(Index in_dim, Index hidden_dim, Index out_dim, Rng& rng) {
    Mlp net(in_dim, hidden_dim, out_dim);
    auto fill = [&rng](Mat& w) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> uniform(-limit, limit);
      for (Index r = 0; r < w.rows(); ++r)
        for (Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(uniform(rng));
    };
    fill(net.w1_);
    fill(net.w2_);
    return net;
  }

  /// Zero network with this network's shapes (gradient buffers, moments).
  Mlp zeros_like() const { return Mlp(in_dim(), hidden_dim(), out_dim()); }

  Index in_dim() const { return w1_.cols(); }
  Index hidden_dim() const { return w1_.rows(); }
  Index out_dim() const { return w2_.rows(); }
  Index parameter_count() const { return w1_.size() + b1_.size() + w2_.size() + b2_.size(); }

  // Maps over the storage: values are mutable, shapes are not.
  MatMap w1() { return MatMap(w1_.data(), w1_.rows(), w1_.cols()); }
  VecMap b1() { return VecMap(b1_.data(), b1_.size()); }
  MatMap w2() { return MatMap(w2_.data(), w2_.rows(), w2_.cols()); }
  VecMap b2() { return VecMap(b2_.data(), b2_.size()); }
  ConstMatMap w1() const { return ConstMatMap(w1_.data(), w1_.rows(), w1_.cols()); }
  ConstVecMap b1() const { return ConstVecMap(b1_.data(), b1_.size()); }
  ConstMatMap w2() const { return ConstMatMap(w2_.data(), w2_.rows(), w2_.cols()); }
  ConstVecMap b2() const { return ConstVecMap(b2_.data(), b2_.size()); }

  /// Calls fn(name, flat view) for W1, b1, W2, b2 in that order.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("W1", VecMap(w1_.data(), w1_.size()));
    fn("b1", VecMap(b1_.data(), b1_.size()));
    fn("W2", VecMap(w2_.data(), w2_.size()));
    fn("b2", VecMap(b2_.data(), b2_.size()));
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    fn("W1", ConstVecMap(w1_.data(), w1_.size()));
    fn("b1", ConstVecMap(b1_.data(), b1_.size()));
    fn("W2", ConstVecMap(w2_.data(), w2_.size()));
    fn("b2", ConstVecMap(b2_.data(), b2_.size()));
  }

  bool same_shape(const Mlp& other) const {
    return in_dim() == other.in_dim() && hidden_dim() == other.hidden_dim() &&
           out_dim() == other.out_dim();
  }

  bool all_finite() const {
    return w1_.allFinite() && b1_.allFinite() && w2_.allFinite() && b2_.allFinite();
  }

  bool operator==(const Mlp& other) const {
    return same_shape(other) && w1_ == other.w1_ && b1_ == other.b1_ && w2_ == other.w2_ &&
           b2_ == other.b2_;
  }

 private:
  Mat w1_;
  Vec b1_;
  Mat w2_;
  Vec b2_;
};

using DiffNet = Mlp<double>;

/// Intermediate values of one forward pass, kept for the backward pass.
template <typename Scalar>
struct MlpTrace {
  typename Mlp<Scalar>::Vec pre;     // W1 x + b1
  typename Mlp<Scalar>::Vec hidden;  // relu(pre)
  typename Mlp<Scalar>::Vec out;
};

template <typename Scalar>
MlpTrace<Scalar> forward_trace(const Mlp<Scalar>& net,
                               const Eigen::Ref<const typename Mlp<Scalar>::Vec>& x) {
  require_shape(x.size() == net.in_dim(), "net input has length " + std::to_string(x.size()) +
                                              ", expected " + std::to_string(net.in_dim()));
  MlpTrace<Scalar> t;
  t.pre.noalias() = net.w1() * x;
  t.pre += net.b1();
  t.hidden = t.pre.cwiseMax(Scalar(0));
  t.out.noalias() = net.w2() * t.hidden;
  t.out += net.b2();
  return t;
}

template <typename Scalar>
typename Mlp<Scalar>::Vec net_forward(const Mlp<Scalar>& net,
                                      const Eigen::Ref<const typename Mlp<Scalar>::Vec>& x) {
  return forward_trace(net, x).out;
}

/// Row-wise forward over a batch: row r of the result is net_forward(net, x.row(r)).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> net_forward_rows(
    const Mlp<Scalar>& net,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& x) {
  require_shape(x.cols() == net.in_dim(), "batch width does not match net input");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(x.rows(),
                                                                            net.out_dim());
  for (Index r = 0; r < x.rows(); ++r)
    out.row(r) = net_forward<Scalar>(net, x.row(r).transpose()).transpose();
  return out;
}

/// Adds scale * d(upstream . out)/d(params) into `grads`, and returns the
/// gradient with respect to the input. relu'(0) is taken as 0.
template <typename Scalar>
typename Mlp<Scalar>::Vec accumulate_backward(
    const Mlp<Scalar>& net, const MlpTrace<Scalar>& trace,
    const Eigen::Ref<const typename Mlp<Scalar>::Vec>& x,
    const Eigen::Ref<const typename Mlp<Scalar>::Vec>& upstream, Mlp<Scalar>& grads,
    Scalar scale = Scalar(1)) {
  require_shape(upstream.size() == net.out_dim(), "upstream gradient length mismatch");
  require_shape(x.size() == net.in_dim(), "net input length mismatch");
  require_shape(grads.same_shape(net), "gradient buffer shape mismatch");
  using Vec = typename Mlp<Scalar>::Vec;

  Vec hidden_grad = net.w2().transpose() * upstream;
  for (Index k = 0; k < hidden_grad.size(); ++k)
    if (!(trace.pre[k] > Scalar(0))) hidden_grad[k] = Scalar(0);

  grads.w2().noalias() += (scale * upstream) * trace.hidden.transpose();
  grads.b2() += scale * upstream;
  grads.w1().noalias() += (scale * hidden_grad) * x.transpose();
  grads.b1() += scale * hidden_grad;
  return net.w1().transpose() * hidden_grad;
}

template <typename Scalar>
struct MlpGradients {
  Mlp<Scalar> params;
  typename Mlp<Scalar>::Vec input;
};

template <typename Scalar>
MlpGradients<Scalar> net_backward(const Mlp<Scalar>& net,
                                  const Eigen::Ref<const typename Mlp<Scalar>::Vec>& x,
                                  const Eigen::Ref<const typename Mlp<Scalar>::Vec>& upstream) {
  MlpGradients<Scalar> g{net.zeros_like(), {}};
  auto trace = forward_trace(net, x);
  g.input = accumulate_backward(net, trace, x, upstream, g.params);
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamState() = default;
  AdamState(const Mlp<Scalar>& like, AdamOptions opts)
      : first_moment(like.zeros_like()), second_moment(like.zeros_like()), options(opts) {}

  std::int64_t step_count = 0;
  Mlp<Scalar> first_moment;
  Mlp<Scalar> second_moment;
  AdamOptions options;
};

/// One bias-corrected Adam update of a flat tensor, for step index t >= 1.
/// Moves `param` against `grad` (minimisation).
template <typename Scalar>
void adam_update(Eigen::Ref<typename Mlp<Scalar>::Vec> param,
                 const Eigen::Ref<const typename Mlp<Scalar>::Vec>& grad,
                 Eigen::Ref<typename Mlp<Scalar>::Vec> m, Eigen::Ref<typename Mlp<Scalar>::Vec> v,
                 std::int64_t t, const AdamOptions& o) {
  const Scalar b1 = Scalar(o.beta1), b2 = Scalar(o.beta2);
  const Scalar c1 = Scalar(1) - Scalar(std::pow(o.beta1, static_cast<double>(t)));
  const Scalar c2 = Scalar(1) - Scalar(std::pow(o.beta2, static_cast<double>(t)));
  const Scalar lr = Scalar(o.learning_rate), eps = Scalar(o.epsilon);
  for (Index k = 0; k < param.size(); ++k) {
    m[k] = b1 * m[k] + (Scalar(1) - b1) * grad[k];
    v[k] = b2 * v[k] + (Scalar(1) - b2) * grad[k] * grad[k];
    const Scalar m_hat = m[k] / c1;
    const Scalar v_hat = v[k] / c2;
    param[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

/// Adam step on every tensor of `params`. Gradients are checked before any
/// tensor is touched; a non-finite entry raises TrainingError naming
/// "<net_name>.<tensor>".
template <typename Scalar>
void adam_step(Mlp<Scalar>& params, const Mlp<Scalar>& grads, AdamState<Scalar>& state,
               std::string_view net_name = "net") {
  require_shape(params.same_shape(grads), "gradient shapes do not match parameters");
  require_shape(params.same_shape(state.first_moment) && params.same_shape(state.second_moment),
                "Adam moments do not match parameters");
  grads.for_each_tensor([&](std::string_view name, const auto& g) {
    if (!g.allFinite())
      throw TrainingError("non-finite gradient in " + std::string(net_name) + "." +
                          std::string(name));
  });

  const std::int64_t t = ++state.step_count;
  // Parameters, gradients and both moments are walked in lockstep.
  using Vec = typename Mlp<Scalar>::Vec;
  auto update = [&](auto p, auto g, auto m, auto v) {
    adam_update<Scalar>(p, g, m, v, t, state.options);
  };
  update(Eigen::Map<Vec>(params.w1().data(), params.w1().size()),
         Eigen::Map<const Vec>(grads.w1().data(), grads.w1().size()),
         Eigen::Map<Vec>(state.first_moment.w1().data(), params.w1().size()),
         Eigen::Map<Vec>(state.second_moment.w1().data(), params.w1().size()));
  update(params.b1(), grads.b1(), state.first_moment.b1(), state.second_moment.b1());
  update(Eigen::Map<Vec>(params.w2().data(), params.w2().size()),
         Eigen::Map<const Vec>(grads.w2().data(), grads.w2().size()),
         Eigen::Map<Vec>(state.first_moment.w2().data(), params.w2().size()),
         Eigen::Map<Vec>(state.second_moment.w2().data(), params.w2().size()));
  update(params.b2(), grads.b2(), state.first_moment.b2(), state.second_moment.b2());

  if (!params.all_finite())
    throw TrainingError("parameters of " + std::string(net_name) + " became non-finite");
}

}  // namespace bem
