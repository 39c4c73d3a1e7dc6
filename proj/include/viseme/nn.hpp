// Minimal neural-network layers on Eigen, templated on the scalar so the
// same graph runs in float for training and in double for finite-difference
// gradient checks. All parameters live in one flat vector; layers hold only
// offsets into it, which keeps optimizer steps and checkpoints trivial.
//
// Batched activations are matrices of shape (channels) x (batch * length)
// with sample b occupying columns [b*L, (b+1)*L). Convolutions never read
// across a sample boundary; padding is per sample.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "viseme/errors.hpp"
#include "viseme/rng.hpp"
#include "viseme/types.hpp"

namespace viseme::nn {

enum class Init { Zeros, Ones, HeUniform, Uniform };

struct TensorSpec {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Init init = Init::Zeros;
  double init_scale = 0.0;  // half-width for Init::Uniform

  Index size() const { return rows * cols; }
};

class ParamLayout {
 public:
  const TensorSpec& add(std::string name, Index rows, Index cols, Init init, double scale = 0.0) {
    if (rows <= 0 || cols <= 0)
      throw validation_error("parameter tensor must be non-empty: " + name);
    if (by_name_.count(name)) throw validation_error("duplicate parameter tensor: " + name);
    TensorSpec t{name, total_, rows, cols, init, scale};
    by_name_[std::move(name)] = specs_.size();
    total_ += t.size();
    specs_.push_back(std::move(t));
    return specs_.back();
  }

  Index total() const { return total_; }
  const std::vector<TensorSpec>& specs() const { return specs_; }

  const TensorSpec& find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw validation_error("unknown parameter tensor: " + name);
    return specs_[it->second];
  }

  // Seeded per tensor name, so the result does not depend on registration
  // order and stays stable across refactors that only reorder layers.
  template <class S>
  void init_params(Vec<S>& theta, std::uint64_t seed) const {
    theta.setZero(total_);
    for (const auto& t : specs_) {
      Rng rng(derive_seed(seed, t.name));
      switch (t.init) {
        case Init::Zeros:
          break;
        case Init::Ones:
          theta.segment(t.offset, t.size()).setOnes();
          break;
        case Init::HeUniform: {
          const double a = std::sqrt(6.0 / static_cast<double>(t.cols));
          for (Index i = 0; i < t.size(); ++i)
            theta[t.offset + i] = static_cast<S>(uniform_real(rng, -a, a));
          break;
        }
        case Init::Uniform:
          for (Index i = 0; i < t.size(); ++i)
            theta[t.offset + i] = static_cast<S>(uniform_real(rng, -t.init_scale, t.init_scale));
          break;
      }
    }
  }

 private:
  std::vector<TensorSpec> specs_;
  std::map<std::string, size_t> by_name_;
  Index total_ = 0;
};

template <class S>
Eigen::Map<const Mat<S>> view(const Vec<S>& theta, const TensorSpec& t) {
  return Eigen::Map<const Mat<S>>(theta.data() + t.offset, t.rows, t.cols);
}

template <class S>
Eigen::Map<Mat<S>> view(Vec<S>& theta, const TensorSpec& t) {
  return Eigen::Map<Mat<S>>(theta.data() + t.offset, t.rows, t.cols);
}

// Saved forward intermediates keyed by layer name. Only populated when a
// backward pass will follow.
template <class S>
struct Trace {
  std::map<std::string, Mat<S>> saved;

  void put(const std::string& key, Mat<S> m) { saved[key] = std::move(m); }
  const Mat<S>& get(const std::string& key) const {
    auto it = saved.find(key);
    if (it == saved.end()) throw validation_error("missing trace entry: " + key);
    return it->second;
  }
};

template <class S>
Mat<S> silu(const Mat<S>& x) {
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

template <class S>
Mat<S> silu_grad(const Mat<S>& x) {
  const auto sig = (S(1) / (S(1) + (-x.array()).exp())).eval();
  return (sig * (S(1) + x.array() * (S(1) - sig))).matrix();
}

template <class S>
Mat<S> sigmoid(const Mat<S>& x) {
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

class Conv1dShape {
 public:
  Conv1dShape() = default;
  Conv1dShape(Index in_ch, Index out_ch, Index k, Index stride, Index pad)
      : in_(in_ch), out_(out_ch), k_(k), stride_(stride), pad_(pad) {}
  Index out_len(Index in_len) const { return (in_len + 2 * pad_ - k_) / stride_ + 1; }
  Index in_ch() const { return in_; }
  Index out_ch() const { return out_; }

 protected:
  Index in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

template <class S>
class Conv1d : public Conv1dShape {
 public:
  Conv1d() = default;
  Conv1d(ParamLayout& layout, const std::string& name, Index in_ch, Index out_ch, Index k,
         Index stride, Index pad, Init weight_init = Init::HeUniform)
      : Conv1dShape(in_ch, out_ch, k, stride, pad), name_(name) {
    w_ = layout.add(name + ".w", out_ch, in_ch * k, weight_init);
    b_ = layout.add(name + ".b", out_ch, 1, Init::Zeros);
  }

  Mat<S> forward(const Mat<S>& x, Index batch, const Vec<S>& theta, Trace<S>* tr) const {
    const Index lin = x.cols() / batch;
    const Index lout = out_len(lin);
    Mat<S> cols = Mat<S>::Zero(in_ * k_, batch * lout);
    for (Index b = 0; b < batch; ++b)
      for (Index t = 0; t < lout; ++t) {
        const Index col = b * lout + t;
        const Index src0 = t * stride_ - pad_;
        for (Index dk = 0; dk < k_; ++dk) {
          const Index src = src0 + dk;
          if (src < 0 || src >= lin) continue;
          cols.block(dk * in_, col, in_, 1) = x.col(b * lin + src);
        }
      }
    Mat<S> y(out_, batch * lout);
    y.noalias() = view(theta, w_) * cols;
    y.colwise() += view(theta, b_).col(0);
    if (tr) {
      tr->put(name_ + ".cols", std::move(cols));
      tr->put(name_ + ".lin", Mat<S>::Constant(1, 1, static_cast<S>(lin)));
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& gy, Index batch, const Vec<S>& theta, const Trace<S>& tr,
                  Vec<S>& grad) const {
    const auto& cols = tr.get(name_ + ".cols");
    const Index lin = static_cast<Index>(tr.get(name_ + ".lin")(0, 0));
    const Index lout = gy.cols() / batch;

    view(grad, w_).noalias() += gy * cols.transpose();
    view(grad, b_).col(0) += gy.rowwise().sum();

    Mat<S> dcols(in_ * k_, batch * lout);
    dcols.noalias() = view(theta, w_).transpose() * gy;

    Mat<S> dx = Mat<S>::Zero(in_, batch * lin);
    for (Index b = 0; b < batch; ++b)
      for (Index t = 0; t < lout; ++t) {
        const Index col = b * lout + t;
        const Index src0 = t * stride_ - pad_;
        for (Index dk = 0; dk < k_; ++dk) {
          const Index src = src0 + dk;
          if (src < 0 || src >= lin) continue;
          dx.col(b * lin + src) += dcols.block(dk * in_, col, in_, 1);
        }
      }
    return dx;
  }

 private:
  std::string name_;
  TensorSpec w_, b_;
};

template <class S>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamLayout& layout, const std::string& name, Index channels, Index groups)
      : name_(name), ch_(channels), groups_(groups) {
    if (channels % groups != 0)
      throw validation_error("group norm: " + std::to_string(channels) +
                             " channels not divisible by " + std::to_string(groups) + " groups");
    gamma_ = layout.add(name + ".gamma", channels, 1, Init::Ones);
    beta_ = layout.add(name + ".beta", channels, 1, Init::Zeros);
  }

  Mat<S> forward(const Mat<S>& x, Index batch, const Vec<S>& theta, Trace<S>* tr) const {
    const Index len = x.cols() / batch;
    const Index cpg = ch_ / groups_;
    Mat<S> xhat(x.rows(), x.cols());
    Mat<S> inv_std(groups_, batch);
    for (Index b = 0; b < batch; ++b)
      for (Index g = 0; g < groups_; ++g) {
        auto blk = x.block(g * cpg, b * len, cpg, len);
        const S mu = blk.mean();
        const S var = (blk.array() - mu).square().mean();
        const S inv = S(1) / std::sqrt(var + S(kEps));
        inv_std(g, b) = inv;
        xhat.block(g * cpg, b * len, cpg, len) = (blk.array() - mu) * inv;
      }
    Mat<S> y = xhat.array().colwise() * view(theta, gamma_).col(0).array();
    y.array().colwise() += view(theta, beta_).col(0).array();
    if (tr) {
      tr->put(name_ + ".xhat", std::move(xhat));
      tr->put(name_ + ".inv", std::move(inv_std));
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& gy, Index batch, const Vec<S>& theta, const Trace<S>& tr,
                  Vec<S>& grad) const {
    const auto& xhat = tr.get(name_ + ".xhat");
    const auto& inv_std = tr.get(name_ + ".inv");
    const Index len = gy.cols() / batch;
    const Index cpg = ch_ / groups_;

    view(grad, gamma_).col(0) += (gy.array() * xhat.array()).rowwise().sum().matrix();
    view(grad, beta_).col(0) += gy.rowwise().sum();

    const Mat<S> u = gy.array().colwise() * view(theta, gamma_).col(0).array();
    Mat<S> dx(gy.rows(), gy.cols());
    for (Index b = 0; b < batch; ++b)
      for (Index g = 0; g < groups_; ++g) {
        auto ub = u.block(g * cpg, b * len, cpg, len);
        auto xb = xhat.block(g * cpg, b * len, cpg, len);
        const S mu_u = ub.mean();
        const S mu_ux = (ub.array() * xb.array()).mean();
        dx.block(g * cpg, b * len, cpg, len) =
            inv_std(g, b) * (ub.array() - mu_u - xb.array() * mu_ux);
      }
    return dx;
  }

 private:
  static constexpr double kEps = 1e-5;
  std::string name_;
  Index ch_ = 0, groups_ = 1;
  TensorSpec gamma_, beta_;
};

// GroupNorm followed by SiLU; the pair appears after nearly every conv.
template <class S>
class NormAct {
 public:
  NormAct() = default;
  NormAct(ParamLayout& layout, const std::string& name, Index channels, Index groups)
      : name_(name), gn_(layout, name + ".gn", channels, groups) {}

  Mat<S> forward(const Mat<S>& x, Index batch, const Vec<S>& theta, Trace<S>* tr) const {
    Mat<S> h = gn_.forward(x, batch, theta, tr);
    if (tr) tr->put(name_ + ".pre", h);
    return silu(h);
  }

  Mat<S> backward(const Mat<S>& gy, Index batch, const Vec<S>& theta, const Trace<S>& tr,
                  Vec<S>& grad) const {
    const auto& pre = tr.get(name_ + ".pre");
    const Mat<S> dh = gy.array() * silu_grad(pre).array();
    return gn_.backward(dh, batch, theta, tr, grad);
  }

 private:
  std::string name_;
  GroupNorm<S> gn_;
};

template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(ParamLayout& layout, const std::string& name, Index in, Index out,
         Init weight_init = Init::HeUniform)
      : name_(name) {
    w_ = layout.add(name + ".w", out, in, weight_init);
    b_ = layout.add(name + ".b", out, 1, Init::Zeros);
  }

  Mat<S> forward(const Mat<S>& x, const Vec<S>& theta, Trace<S>* tr) const {
    Mat<S> y(w_.rows, x.cols());
    y.noalias() = view(theta, w_) * x;
    y.colwise() += view(theta, b_).col(0);
    if (tr) tr->put(name_ + ".x", x);
    return y;
  }

  Mat<S> backward(const Mat<S>& gy, const Vec<S>& theta, const Trace<S>& tr, Vec<S>& grad) const {
    const auto& x = tr.get(name_ + ".x");
    view(grad, w_).noalias() += gy * x.transpose();
    view(grad, b_).col(0) += gy.rowwise().sum();
    Mat<S> dx(x.rows(), x.cols());
    dx.noalias() = view(theta, w_).transpose() * gy;
    return dx;
  }

 private:
  std::string name_;
  TensorSpec w_, b_;
};

template <class S>
Mat<S> upsample2(const Mat<S>& x, Index batch) {
  const Index len = x.cols() / batch;
  Mat<S> y(x.rows(), x.cols() * 2);
  for (Index b = 0; b < batch; ++b)
    for (Index t = 0; t < len; ++t) {
      y.col(b * 2 * len + 2 * t) = x.col(b * len + t);
      y.col(b * 2 * len + 2 * t + 1) = x.col(b * len + t);
    }
  return y;
}

template <class S>
Mat<S> upsample2_backward(const Mat<S>& gy, Index batch) {
  const Index lout = gy.cols() / batch;
  const Index len = lout / 2;
  Mat<S> dx(gy.rows(), batch * len);
  for (Index b = 0; b < batch; ++b)
    for (Index t = 0; t < len; ++t)
      dx.col(b * len + t) =
          gy.col(b * lout + 2 * t) + gy.col(b * lout + 2 * t + 1);
  return dx;
}

// Mean over time per sample: (C, B*L) -> (C, B).
template <class S>
Mat<S> global_avg_pool(const Mat<S>& x, Index batch) {
  const Index len = x.cols() / batch;
  Mat<S> y(x.rows(), batch);
  for (Index b = 0; b < batch; ++b) y.col(b) = x.middleCols(b * len, len).rowwise().mean();
  return y;
}

template <class S>
Mat<S> global_avg_pool_backward(const Mat<S>& gy, Index batch, Index len) {
  Mat<S> dx(gy.rows(), batch * len);
  for (Index b = 0; b < batch; ++b)
    dx.middleCols(b * len, len) =
        (gy.col(b) * (S(1) / static_cast<S>(len))).replicate(1, len);
  return dx;
}

// Channel attention with one scalar MLP shared by every channel: each
// channel's gate depends only on its own pooled mean, so permuting channels
// permutes the gates. A full squeeze-excite mixing matrix would break that.
template <class S>
class ChannelSe {
 public:
  ChannelSe() = default;
  ChannelSe(ParamLayout& layout, const std::string& name, Index channels, Index hidden)
      : name_(name), ch_(channels), hidden_(hidden) {
    w1_ = layout.add(name + ".w1", hidden, 1, Init::HeUniform);
    b1_ = layout.add(name + ".b1", hidden, 1, Init::Zeros);
    w2_ = layout.add(name + ".w2", hidden, 1, Init::HeUniform);
    b2_ = layout.add(name + ".b2", 1, 1, Init::Zeros);
  }

  Mat<S> forward(const Mat<S>& x, Index batch, const Vec<S>& theta, Trace<S>* tr) const {
    const Index len = x.cols() / batch;
    const Mat<S> z = global_avg_pool(x, batch);  // (C, B)
    const Eigen::Map<const Mat<S>> zflat(z.data(), 1, ch_ * batch);

    Mat<S> hpre(hidden_, ch_ * batch);
    hpre.noalias() = view(theta, w1_) * zflat;
    hpre.colwise() += view(theta, b1_).col(0);
    const Mat<S> h = silu(hpre);
    Mat<S> a(1, ch_ * batch);
    a.noalias() = view(theta, w2_).transpose() * h;
    a.array() += view(theta, b2_)(0, 0);
    const Mat<S> gflat = sigmoid(a);
    const Eigen::Map<const Mat<S>> g(gflat.data(), ch_, batch);

    Mat<S> y(x.rows(), x.cols());
    for (Index b = 0; b < batch; ++b)
      y.middleCols(b * len, len) = x.middleCols(b * len, len).array().colwise() * g.col(b).array();
    if (tr) {
      tr->put(name_ + ".x", x);
      tr->put(name_ + ".z", z);
      tr->put(name_ + ".hpre", hpre);
      tr->put(name_ + ".h", h);
      tr->put(name_ + ".g", Mat<S>(g));
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& gy, Index batch, const Vec<S>& theta, const Trace<S>& tr,
                  Vec<S>& grad) const {
    const auto& x = tr.get(name_ + ".x");
    const auto& z = tr.get(name_ + ".z");
    const auto& hpre = tr.get(name_ + ".hpre");
    const auto& h = tr.get(name_ + ".h");
    const auto& g = tr.get(name_ + ".g");
    const Index len = x.cols() / batch;

    Mat<S> dx(x.rows(), x.cols());
    Mat<S> dg(ch_, batch);
    for (Index b = 0; b < batch; ++b) {
      dx.middleCols(b * len, len) =
          gy.middleCols(b * len, len).array().colwise() * g.col(b).array();
      dg.col(b) = (gy.middleCols(b * len, len).array() * x.middleCols(b * len, len).array())
                      .rowwise()
                      .sum();
    }

    const Mat<S> da =
        (dg.array() * g.array() * (S(1) - g.array())).matrix();  // (C, B)
    const Eigen::Map<const Mat<S>> daflat(da.data(), 1, ch_ * batch);
    const Eigen::Map<const Mat<S>> zflat(z.data(), 1, ch_ * batch);

    view(grad, w2_).noalias() += h * daflat.transpose();
    view(grad, b2_)(0, 0) += daflat.sum();
    Mat<S> dh(hidden_, ch_ * batch);
    dh.noalias() = view(theta, w2_) * daflat;
    const Mat<S> dhpre = (dh.array() * silu_grad(hpre).array()).matrix();
    view(grad, w1_).noalias() += dhpre * zflat.transpose();
    view(grad, b1_).col(0) += dhpre.rowwise().sum();
    Mat<S> dzflat(1, ch_ * batch);
    dzflat.noalias() = view(theta, w1_).transpose() * dhpre;
    const Eigen::Map<const Mat<S>> dz(dzflat.data(), ch_, batch);

    dx += global_avg_pool_backward(Mat<S>(dz), batch, len);
    return dx;
  }

 private:
  std::string name_;
  Index ch_ = 0, hidden_ = 0;
  TensorSpec w1_, b1_, w2_, b2_;
};

// One learned scalar function per input-output edge: a cubic B-spline on a
// fixed grid plus a SiLU bypass. Inputs are squashed into the grid interior
// with 2*tanh(x/2) so no sample ever leaves the spline support.
template <class S>
class KanLayer {
 public:
  static constexpr Index kBasis = 7;  // cubic splines on integer knots -5..5

  KanLayer() = default;
  KanLayer(ParamLayout& layout, const std::string& name, Index in, Index out)
      : name_(name), in_(in), out_(out) {
    wbase_ = layout.add(name + ".wbase", out, in, Init::HeUniform);
    coef_ = layout.add(name + ".coef", out, in * kBasis, Init::Uniform, 0.1);
    bias_ = layout.add(name + ".bias", out, 1, Init::Zeros);
  }

  // Cubic Cox-de Boor on unit-spaced knots t_j = j - 5. bval/bder get the 7
  // basis values and du-derivatives.
  static void basis(double u, double* bval, double* bder) {
    auto knot = [](int j) { return static_cast<double>(j - 5); };
    double n0[10], n1[9], n2[8];
    for (int j = 0; j < 10; ++j) n0[j] = (u >= knot(j) && u < knot(j + 1)) ? 1.0 : 0.0;
    for (int j = 0; j < 9; ++j)
      n1[j] = (u - knot(j)) * n0[j] + (knot(j + 2) - u) * n0[j + 1];
    for (int j = 0; j < 8; ++j)
      n2[j] = ((u - knot(j)) * n1[j] + (knot(j + 3) - u) * n1[j + 1]) / 2.0;
    for (int j = 0; j < 7; ++j) {
      bval[j] = ((u - knot(j)) * n2[j] + (knot(j + 4) - u) * n2[j + 1]) / 3.0;
      bder[j] = n2[j] - n2[j + 1];
    }
  }

  Mat<S> forward(const Mat<S>& x, const Vec<S>& theta, Trace<S>* tr) const {
    const Index batch = x.cols();
    Mat<S> gmat(in_ * kBasis, batch);
    Mat<S> gder(in_ * kBasis, batch);
    double bval[kBasis], bder[kBasis];
    for (Index b = 0; b < batch; ++b)
      for (Index i = 0; i < in_; ++i) {
        const double xi = static_cast<double>(x(i, b));
        const double th = std::tanh(xi / 2.0);
        const double u = 2.0 * th;
        const double dudx = 1.0 - th * th;
        basis(u, bval, bder);
        for (Index k = 0; k < kBasis; ++k) {
          gmat(i * kBasis + k, b) = static_cast<S>(bval[k]);
          gder(i * kBasis + k, b) = static_cast<S>(bder[k] * dudx);
        }
      }
    const Mat<S> sx = silu(x);
    Mat<S> y(out_, batch);
    y.noalias() = view(theta, wbase_) * sx;
    y.noalias() += view(theta, coef_) * gmat;
    y.colwise() += view(theta, bias_).col(0);
    if (tr) {
      tr->put(name_ + ".x", x);
      tr->put(name_ + ".sx", sx);
      tr->put(name_ + ".g", std::move(gmat));
      tr->put(name_ + ".gd", std::move(gder));
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& gy, const Vec<S>& theta, const Trace<S>& tr, Vec<S>& grad) const {
    const auto& x = tr.get(name_ + ".x");
    const auto& sx = tr.get(name_ + ".sx");
    const auto& gmat = tr.get(name_ + ".g");
    const auto& gder = tr.get(name_ + ".gd");
    const Index batch = x.cols();

    view(grad, wbase_).noalias() += gy * sx.transpose();
    view(grad, coef_).noalias() += gy * gmat.transpose();
    view(grad, bias_).col(0) += gy.rowwise().sum();

    Mat<S> dsx(in_, batch);
    dsx.noalias() = view(theta, wbase_).transpose() * gy;
    Mat<S> dx = (dsx.array() * silu_grad(x).array()).matrix();

    Mat<S> dg(in_ * kBasis, batch);
    dg.noalias() = view(theta, coef_).transpose() * gy;
    const Mat<S> dgd = (dg.array() * gder.array()).matrix();
    for (Index b = 0; b < batch; ++b)
      for (Index i = 0; i < in_; ++i)
        dx(i, b) += dgd.block(i * kBasis, b, kBasis, 1).sum();
    return dx;
  }

 private:
  std::string name_;
  Index in_ = 0, out_ = 0;
  TensorSpec wbase_, coef_, bias_;
};

// Sinusoidal step embedding, (dim, B). Frequencies follow the usual
// geometric ladder over half the dimension.
template <class S>
Mat<S> time_embedding(const std::vector<int>& tsteps, Index dim) {
  if (dim % 2 != 0) throw validation_error("time embedding dimension must be even");
  const Index half = dim / 2;
  Mat<S> e(dim, static_cast<Index>(tsteps.size()));
  for (size_t b = 0; b < tsteps.size(); ++b)
    for (Index i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(half));
      const double ph = static_cast<double>(tsteps[b]) * freq;
      e(2 * i, static_cast<Index>(b)) = static_cast<S>(std::sin(ph));
      e(2 * i + 1, static_cast<Index>(b)) = static_cast<S>(std::cos(ph));
    }
  return e;
}

// Pre-activation residual block with a per-block projection of the step
// embedding added as a channel bias between the two convs.
template <class S>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParamLayout& layout, const std::string& name, Index channels, Index temb_dim, Index k,
           Index groups)
      : name_(name),
        na1_(layout, name + ".na1", channels, groups),
        conv1_(layout, name + ".conv1", channels, channels, k, 1, (k - 1) / 2),
        t1_(layout, name + ".t1", temb_dim, channels),
        t2_(layout, name + ".t2", channels, channels),
        na2_(layout, name + ".na2", channels, groups),
        conv2_(layout, name + ".conv2", channels, channels, k, 1, (k - 1) / 2) {}

  Mat<S> forward(const Mat<S>& x, const Mat<S>& temb, Index batch, const Vec<S>& theta,
                 Trace<S>* tr) const {
    const Index len = x.cols() / batch;
    Mat<S> h = conv1_.forward(na1_.forward(x, batch, theta, tr), batch, theta, tr);
    Mat<S> tp1 = t1_.forward(temb, theta, tr);
    if (tr) tr->put(name_ + ".tp1", tp1);
    Mat<S> tp = t2_.forward(silu(tp1), theta, tr);  // (C, B)
    for (Index b = 0; b < batch; ++b) h.middleCols(b * len, len).colwise() += tp.col(b);
    Mat<S> out = conv2_.forward(na2_.forward(h, batch, theta, tr), batch, theta, tr);
    return x + out;
  }

  Mat<S> backward(const Mat<S>& gy, Index batch, const Vec<S>& theta, const Trace<S>& tr,
                  Vec<S>& grad) const {
    const Index len = gy.cols() / batch;
    Mat<S> dh = na2_.backward(conv2_.backward(gy, batch, theta, tr, grad), batch, theta, tr, grad);

    Mat<S> dtp(dh.rows(), batch);
    for (Index b = 0; b < batch; ++b) dtp.col(b) = dh.middleCols(b * len, len).rowwise().sum();
    const auto& tp1 = tr.get(name_ + ".tp1");
    Mat<S> dtp1s = t2_.backward(dtp, theta, tr, grad);
    t1_.backward((dtp1s.array() * silu_grad(tp1).array()).matrix(), theta, tr, grad);

    Mat<S> dx = na1_.backward(conv1_.backward(dh, batch, theta, tr, grad), batch, theta, tr, grad);
    return dx + gy;
  }

 private:
  std::string name_;
  NormAct<S> na1_;
  Conv1d<S> conv1_;
  Linear<S> t1_, t2_;
  NormAct<S> na2_;
  Conv1d<S> conv2_;
};

}  // namespace viseme::nn
