#pragma once

#include "relgoal/rng.hpp"
#include "relgoal/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace relgoal::nn {

using ad::Matrix;
using ad::Tensor;

// Weights uniform in +/- sqrt(6 / (fan_in + fan_out)).
inline Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
  return w;
}

enum class OutputActivation { identity, tanh };

// Fully connected network, ReLU hidden activations. Weights are [in, out]
// so activations are row-batched: y = x W + b.
struct Mlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  OutputActivation out_act = OutputActivation::identity;

  // widths = {in, h1, ..., out}
  static Mlp make(const std::vector<Eigen::Index>& widths, OutputActivation out, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least in/out widths");
    for (auto w : widths)
      if (w <= 0) throw std::invalid_argument("Mlp: widths must be positive");
    Mlp m;
    m.out_act = out;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      m.weights.push_back(Tensor::param(xavier_uniform(widths[l], widths[l + 1], rng)));
      m.biases.push_back(Tensor::param(Matrix::Zero(1, widths[l + 1])));
    }
    return m;
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = add(matmul(h, weights[l]), biases[l]);
      if (l + 1 < weights.size())
        h = relu(h);
      else if (out_act == OutputActivation::tanh)
        h = tanh_(h);
    }
    return h;
  }

  Eigen::Index in_dim() const { return weights.front().rows(); }
  Eigen::Index out_dim() const { return weights.back().cols(); }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back(prefix + ".W" + std::to_string(l), weights[l]);
      out.emplace_back(prefix + ".b" + std::to_string(l), biases[l]);
    }
  }
};

// Gated recurrent unit:
//   z = sigmoid([x, h] Wz + bz)
//   r = sigmoid([x, h] Wr + br)
//   c = tanh([x, r.h] Wc + bc)
//   h' = (1 - z).h + z.c
struct GruCell {
  Eigen::Index input_dim = 0, hidden_dim = 0;
  Tensor Wz, bz, Wr, br, Wc, bc;

  static GruCell make(Eigen::Index input_dim, Eigen::Index hidden_dim, Rng& rng) {
    GruCell g;
    g.input_dim = input_dim;
    g.hidden_dim = hidden_dim;
    Eigen::Index in = input_dim + hidden_dim;
    g.Wz = Tensor::param(xavier_uniform(in, hidden_dim, rng));
    g.Wr = Tensor::param(xavier_uniform(in, hidden_dim, rng));
    g.Wc = Tensor::param(xavier_uniform(in, hidden_dim, rng));
    g.bz = Tensor::param(Matrix::Zero(1, hidden_dim));
    g.br = Tensor::param(Matrix::Zero(1, hidden_dim));
    g.bc = Tensor::param(Matrix::Zero(1, hidden_dim));
    return g;
  }

  Tensor forward(const Tensor& x, const Tensor& h) const {
    Tensor xh = concat_cols(x, h);
    Tensor z = sigmoid(add(matmul(xh, Wz), bz));
    Tensor r = sigmoid(add(matmul(xh, Wr), br));
    Tensor xc = concat_cols(x, mul(r, h));
    Tensor c = tanh_(add(matmul(xc, Wc), bc));
    return add(mul(affine(z, -1.0, 1.0), h), mul(z, c));
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back(prefix + ".Wz", Wz);
    out.emplace_back(prefix + ".bz", bz);
    out.emplace_back(prefix + ".Wr", Wr);
    out.emplace_back(prefix + ".br", br);
    out.emplace_back(prefix + ".Wc", Wc);
    out.emplace_back(prefix + ".bc", bc);
  }
};

// Adam with bias correction; adam_step applies the update and zeroes grads.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Matrix> m, v;

  static AdamState make(const std::vector<Tensor>& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
    return s;
  }
};

inline void adam_step(std::vector<Tensor>& params, AdamState& s) {
  s.step_count += 1;
  double bc1 = 1.0 - std::pow(s.beta1, double(s.step_count));
  double bc2 = 1.0 - std::pow(s.beta2, double(s.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const Matrix& g = p.grad_or_zero();
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g.cwiseProduct(g);
    Matrix mhat = s.m[i] / bc1;
    Matrix vhat = s.v[i] / bc2;
    p.value().array() -= s.lr * mhat.array() / (vhat.array().sqrt() + s.eps);
    p.zero_grad();
  }
}

inline void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace relgoal::nn
