#pragma once

// CNN surrogate: stackup embedding FC(17->256) reshaped to a fourth 16x16
// channel, a stack of [conv -> batch norm -> leaky ReLU] blocks, then an FC
// head with leaky ReLU between layers and dropout before the final layer.
//
// Activations are stored as C x (P*B) matrices (P = pixels, B = batch) with
// column b*P + p, so a convolution is one GEMM against its im2col matrix.
// Conv weights are [Cout, k*k*Cin] with column tap*Cin + ci. Conv layers have
// no bias; the batch norm shift that follows makes it redundant.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "pdnforge/error.hpp"
#include "pdnforge/rng.hpp"
#include "pdnforge/surrogate/config.hpp"

namespace pdnforge::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Mode { train, eval };

template <class T>
struct ModelParams {
  ModelConfig config;
  Mat<T> embed_w;
  Vec<T> embed_b;
  std::vector<Mat<T>> conv_w;
  std::vector<Vec<T>> bn_gamma, bn_beta;
  std::vector<Vec<T>> bn_mean, bn_var;  // running statistics, not trained
  std::vector<Mat<T>> fc_w;
  std::vector<Vec<T>> fc_b;

  /// f(name, shape, data, count, trainable) for every array, in a fixed order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const std::vector<std::int64_t>&, const T*, std::size_t c, bool t) {
      if (t) n += c;
    });
    return n;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    auto mat = [&](const std::string& name, auto& a, bool trainable) {
      f(name, std::vector<std::int64_t>{a.rows(), a.cols()}, a.data(), static_cast<std::size_t>(a.size()), trainable);
    };
    auto vec = [&](const std::string& name, auto& a, bool trainable) {
      f(name, std::vector<std::int64_t>{a.size()}, a.data(), static_cast<std::size_t>(a.size()), trainable);
    };
    mat("embed.weight", s.embed_w, true);
    vec("embed.bias", s.embed_b, true);
    for (std::size_t l = 0; l < s.conv_w.size(); ++l) {
      const std::string i = std::to_string(l);
      mat("conv" + i + ".weight", s.conv_w[l], true);
      vec("bn" + i + ".gamma", s.bn_gamma[l], true);
      vec("bn" + i + ".beta", s.bn_beta[l], true);
      vec("bn" + i + ".running_mean", s.bn_mean[l], false);
      vec("bn" + i + ".running_var", s.bn_var[l], false);
    }
    for (std::size_t l = 0; l < s.fc_w.size(); ++l) {
      const std::string i = std::to_string(l);
      mat("fc" + i + ".weight", s.fc_w[l], true);
      vec("fc" + i + ".bias", s.fc_b[l], true);
    }
  }
};

/// Parameters of the right shapes, all zero (BN running variance one).
template <class T>
ModelParams<T> zero_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.config = cfg;
  p.embed_w = Mat<T>::Zero(cfg.embed_width, cfg.stackup_size);
  p.embed_b = Vec<T>::Zero(cfg.embed_width);
  int cin = cfg.input_channels();
  const int taps = cfg.kernel * cfg.kernel;
  for (int cout : cfg.channel_widths) {
    p.conv_w.push_back(Mat<T>::Zero(cout, taps * cin));
    p.bn_gamma.push_back(Vec<T>::Zero(cout));
    p.bn_beta.push_back(Vec<T>::Zero(cout));
    p.bn_mean.push_back(Vec<T>::Zero(cout));
    p.bn_var.push_back(Vec<T>::Ones(cout));
    cin = cout;
  }
  int in = cfg.flat_width();
  for (int out : cfg.fc_widths) {
    p.fc_w.push_back(Mat<T>::Zero(out, in));
    p.fc_b.push_back(Vec<T>::Zero(out));
    in = out;
  }
  return p;
}

/// Kaiming fan-in normal weights, zero biases, BN affine (1, 0).
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p = zero_params<T>(cfg);
  Rng rng(seed);
  auto fill = [&](Mat<T>& w) {
    const double sd = std::sqrt(2.0 / static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<T>(sd * rng.normal());
  };
  fill(p.embed_w);
  for (auto& w : p.conv_w) fill(w);
  for (auto& g : p.bn_gamma) g.setOnes();
  for (auto& w : p.fc_w) fill(w);
  return p;
}

template <class T>
void check_shapes(const ModelParams<T>& p) {
  const ModelConfig& c = p.config;
  auto expect = [](bool ok, const std::string& layer) {
    if (!ok) throw ContractError("parameter shape mismatch in layer " + layer);
  };
  expect(p.embed_w.rows() == c.embed_width && p.embed_w.cols() == c.stackup_size &&
             p.embed_b.size() == c.embed_width,
         "embed");
  expect(p.conv_w.size() == c.channel_widths.size() && p.bn_gamma.size() == p.conv_w.size() &&
             p.bn_beta.size() == p.conv_w.size() && p.bn_mean.size() == p.conv_w.size() &&
             p.bn_var.size() == p.conv_w.size(),
         "conv stack");
  int cin = c.input_channels();
  for (std::size_t l = 0; l < p.conv_w.size(); ++l) {
    const int cout = c.channel_widths[l];
    const std::string n = "conv" + std::to_string(l);
    expect(p.conv_w[l].rows() == cout && p.conv_w[l].cols() == c.kernel * c.kernel * cin, n);
    expect(p.bn_gamma[l].size() == cout && p.bn_beta[l].size() == cout && p.bn_mean[l].size() == cout &&
               p.bn_var[l].size() == cout,
           "bn" + std::to_string(l));
    cin = cout;
  }
  expect(p.fc_w.size() == c.fc_widths.size() && p.fc_b.size() == p.fc_w.size(), "fc head");
  int in = c.flat_width();
  for (std::size_t l = 0; l < p.fc_w.size(); ++l) {
    const std::string n = "fc" + std::to_string(l);
    expect(p.fc_w[l].rows() == c.fc_widths[l] && p.fc_w[l].cols() == in && p.fc_b[l].size() == c.fc_widths[l], n);
    in = c.fc_widths[l];
  }
}

/// Intermediate values kept by a train-mode forward pass for backward.
template <class T>
struct ForwardCache {
  Mat<T> stackup;
  std::vector<Mat<T>> act;  // act[0] = conv input, act[l+1] = output of block l
  std::vector<Mat<T>> xhat;
  std::vector<Vec<T>> istd, batch_mean, batch_var;
  std::vector<Mat<T>> fc_in;  // input of each FC layer (after dropout for the last)
  Mat<T> dropout_mask;        // 0 or 1/(1-rate)
};

namespace detail {

template <class T>
void im2col(const Mat<T>& x, int grid, int k, Mat<T>& cols) {
  const Eigen::Index cin = x.rows(), P = grid * grid, B = x.cols() / P;
  const int pad = k / 2;
  cols.resize(k * k * cin, x.cols());
  for (Eigen::Index b = 0; b < B; ++b)
    for (int y = 0; y < grid; ++y)
      for (int xx = 0; xx < grid; ++xx) {
        T* dst = cols.col(b * P + y * grid + xx).data();
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx, dst += cin) {
            const int sy = y + ky - pad, sx = xx + kx - pad;
            if (sy < 0 || sy >= grid || sx < 0 || sx >= grid) {
              std::fill(dst, dst + cin, T(0));
            } else {
              const T* src = x.col(b * P + sy * grid + sx).data();
              std::copy(src, src + cin, dst);
            }
          }
      }
}

template <class T>
void col2im(const Mat<T>& cols, int grid, int k, Eigen::Index cin, Mat<T>& dx) {
  const Eigen::Index P = grid * grid, B = cols.cols() / P;
  const int pad = k / 2;
  dx.setZero(cin, cols.cols());
  for (Eigen::Index b = 0; b < B; ++b)
    for (int y = 0; y < grid; ++y)
      for (int xx = 0; xx < grid; ++xx) {
        const T* src = cols.col(b * P + y * grid + xx).data();
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx, src += cin) {
            const int sy = y + ky - pad, sx = xx + kx - pad;
            if (sy < 0 || sy >= grid || sx < 0 || sx >= grid) continue;
            T* dst = dx.col(b * P + sy * grid + sx).data();
            for (Eigen::Index c = 0; c < cin; ++c) dst[c] += src[c];
          }
      }
}

template <class T>
void leaky_inplace(Mat<T>& m, T slope) {
  m = m.cwiseMax(slope * m);
}

template <class T>
void leaky_frozen(Mat<T>& m, const Mat<T>& pattern, T slope) {
  if (pattern.rows() != m.rows() || pattern.cols() != m.cols()) throw ContractError("frozen pattern shape mismatch");
  m = m.binaryExpr(pattern, [slope](T v, T o) { return o > T(0) ? v : v * slope; });
}

// d/dx of leaky ReLU, read off its output (same sign as its input).
template <class T>
void leaky_backward(Mat<T>& grad, const Mat<T>& out, T slope) {
  grad = grad.binaryExpr(out, [slope](T g, T o) { return o > T(0) ? g : g * slope; });
}

}  // namespace detail

/// Forward pass. `placement` is (3*P) x B in channel-row-col order, `stackup`
/// is 17 x B; returns outputs x B. Train mode uses batch statistics and
/// dropout drawn from `dropout_rng`; eval mode uses running statistics and no
/// dropout. Running statistics are not touched here (see update_running_stats).
/// With `frozen`, each leaky ReLU takes its slope from the sign pattern of that
/// earlier pass instead of its own input (finite-difference checks use this to
/// stay on one linear piece).
template <class T>
Mat<T> forward(const ModelParams<T>& p, const Mat<T>& placement, const Mat<T>& stackup, Mode mode,
               std::type_identity_t<ForwardCache<T>>* cache = nullptr, Rng* dropout_rng = nullptr,
               const std::type_identity_t<ForwardCache<T>>* frozen = nullptr) {
  const ModelConfig& c = p.config;
  check_shapes(p);
  const Eigen::Index P = c.pixels(), B = placement.cols();
  if (placement.rows() != c.placement_channels * P)
    throw ContractError("input shape mismatch in layer placement: expected " +
                        std::to_string(c.placement_channels * P) + " rows");
  if (stackup.rows() != c.stackup_size || stackup.cols() != B)
    throw ContractError("input shape mismatch in layer embed: expected " + std::to_string(c.stackup_size) +
                        " x batch");
  if (B < 1) throw ContractError("empty batch");
  const bool train = mode == Mode::train;
  if (train && c.dropout_rate > 0.0 && dropout_rng == nullptr)
    throw ContractError("train mode needs a dropout random source");
  const T slope = static_cast<T>(c.leaky_slope);

  Mat<T> emb = p.embed_w * stackup;
  emb.colwise() += p.embed_b;
  Mat<T> x(c.input_channels(), P * B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int ch = 0; ch < c.placement_channels; ++ch)
      x.row(ch).segment(b * P, P) = placement.col(b).segment(ch * P, P).transpose();
    x.row(c.placement_channels).segment(b * P, P) = emb.col(b).transpose();
  }

  if (cache) {
    *cache = ForwardCache<T>{};
    cache->stackup = stackup;
    cache->act.push_back(x);
  }
  Mat<T> cols, z;
  for (std::size_t l = 0; l < p.conv_w.size(); ++l) {
    detail::im2col(x, c.grid, c.kernel, cols);
    z.noalias() = p.conv_w[l] * cols;
    Vec<T> mean, var;
    if (train) {
      mean = z.rowwise().mean();
      z.colwise() -= mean;
      var = z.array().square().rowwise().mean();
    } else {
      mean = p.bn_mean[l];
      var = p.bn_var[l];
      z.colwise() -= mean;
    }
    const Vec<T> istd = (var.array() + static_cast<T>(c.bn_epsilon)).rsqrt();
    z = istd.asDiagonal() * z;  // xhat
    if (cache) {
      cache->xhat.push_back(z);
      cache->istd.push_back(istd);
      cache->batch_mean.push_back(mean);
      cache->batch_var.push_back(var);
    }
    x = p.bn_gamma[l].asDiagonal() * z;
    x.colwise() += p.bn_beta[l];
    if (frozen)
      detail::leaky_frozen(x, frozen->act.at(l + 1), slope);
    else
      detail::leaky_inplace(x, slope);
    if (cache) cache->act.push_back(x);
  }

  const Eigen::Index C = x.rows();
  Mat<T> h(C * P, B);
  for (Eigen::Index b = 0; b < B; ++b)
    Eigen::Map<Mat<T>>(h.col(b).data(), P, C) = x.middleCols(b * P, P).transpose();

  const std::size_t nfc = p.fc_w.size();
  for (std::size_t l = 0; l < nfc; ++l) {
    if (l + 1 == nfc && train && c.dropout_rate > 0.0) {
      Mat<T> mask(h.rows(), h.cols());
      const T keep = static_cast<T>(1.0 / (1.0 - c.dropout_rate));
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
          mask(i, j) = dropout_rng->uniform() < c.dropout_rate ? T(0) : keep;
      h.array() *= mask.array();
      if (cache) cache->dropout_mask = std::move(mask);
    }
    if (cache) cache->fc_in.push_back(h);
    Mat<T> out = p.fc_w[l] * h;
    out.colwise() += p.fc_b[l];
    if (l + 1 < nfc) {
      if (frozen)
        detail::leaky_frozen(out, frozen->fc_in.at(l + 1), slope);
      else
        detail::leaky_inplace(out, slope);
    }
    h = std::move(out);
  }
  return h;
}

/// Exponential moving average of BN statistics from a train-mode cache
/// (unbiased batch variance, as is conventional).
template <class T>
void update_running_stats(ModelParams<T>& p, const ForwardCache<T>& cache) {
  const T m = static_cast<T>(p.config.bn_momentum);
  for (std::size_t l = 0; l < p.conv_w.size(); ++l) {
    const double n = static_cast<double>(cache.xhat[l].cols());
    const T unbias = static_cast<T>(n > 1 ? n / (n - 1) : 1.0);
    p.bn_mean[l] = (T(1) - m) * p.bn_mean[l] + m * cache.batch_mean[l];
    p.bn_var[l] = (T(1) - m) * p.bn_var[l] + (m * unbias) * cache.batch_var[l];
  }
}

/// Gradients of a scalar loss with respect to every trainable array, given
/// dL/d(outputs) for the pass recorded in `cache` (train mode).
template <class T>
ModelParams<T> backward(const ModelParams<T>& p, const ForwardCache<T>& cache, const Mat<T>& dout) {
  const ModelConfig& c = p.config;
  const T slope = static_cast<T>(c.leaky_slope);
  ModelParams<T> g = zero_params<T>(c);
  const std::size_t nfc = p.fc_w.size();
  if (cache.fc_in.size() != nfc || cache.act.size() != p.conv_w.size() + 1)
    throw ContractError("backward: cache does not match the model");

  Mat<T> d = dout;
  for (std::size_t l = nfc; l-- > 0;) {
    const Mat<T>& in = cache.fc_in[l];
    g.fc_w[l].noalias() = d * in.transpose();
    g.fc_b[l] = d.rowwise().sum();
    Mat<T> din = p.fc_w[l].transpose() * d;
    if (l + 1 == nfc && cache.dropout_mask.size() > 0) din.array() *= cache.dropout_mask.array();
    if (l > 0) {
      // fc_in[l] is the leaky output of layer l-1 (before dropout for the last
      // layer; dropout keeps the sign or zeroes, and zeroed entries have zero
      // gradient already).
      detail::leaky_backward(din, in, slope);
    }
    d = std::move(din);
  }

  const Eigen::Index P = c.pixels();
  const Eigen::Index B = d.cols();
  const Mat<T>& last = cache.act.back();
  const Eigen::Index C = last.rows();
  Mat<T> da(C, P * B);
  for (Eigen::Index b = 0; b < B; ++b)
    da.middleCols(b * P, P) = Eigen::Map<const Mat<T>>(d.col(b).data(), P, C).transpose();

  Mat<T> cols, dcols;
  for (std::size_t l = p.conv_w.size(); l-- > 0;) {
    detail::leaky_backward(da, cache.act[l + 1], slope);
    const Mat<T>& xhat = cache.xhat[l];
    const T n = static_cast<T>(xhat.cols());
    g.bn_gamma[l] = (da.array() * xhat.array()).rowwise().sum();
    g.bn_beta[l] = da.rowwise().sum();
    const Vec<T> scale = p.bn_gamma[l].cwiseProduct(cache.istd[l]);
    // dz = scale * (da - mean(da) - xhat * mean(da * xhat)), row-wise
    Mat<T> dz = da;
    dz.colwise() -= g.bn_beta[l] / n;
    dz -= (g.bn_gamma[l] / n).asDiagonal() * xhat;
    dz = scale.asDiagonal() * dz;
    detail::im2col(cache.act[l], c.grid, c.kernel, cols);
    g.conv_w[l].noalias() = dz * cols.transpose();
    dcols.noalias() = p.conv_w[l].transpose() * dz;
    detail::col2im(dcols, c.grid, c.kernel, cache.act[l].rows(), da);
  }

  Mat<T> demb(P, B);
  for (Eigen::Index b = 0; b < B; ++b)
    demb.col(b) = da.row(c.placement_channels).segment(b * P, P).transpose();
  g.embed_w.noalias() = demb * cache.stackup.transpose();
  g.embed_b = demb.rowwise().sum();
  return g;
}

/// sqrt(mean squared error) over every output of every sample; optionally
/// the gradient with respect to `pred`.
template <class T>
T loss_rmse(const Mat<T>& pred, const Mat<T>& label, Mat<T>* grad = nullptr) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw ContractError("loss_rmse: prediction and label shapes differ");
  const double n = static_cast<double>(pred.size());
  double ss = 0.0;
  for (Eigen::Index j = 0; j < pred.cols(); ++j)
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      const double e = static_cast<double>(pred(i, j)) - static_cast<double>(label(i, j));
      ss += e * e;
    }
  const double rmse = std::sqrt(ss / n);
  if (grad) {
    if (rmse > 0.0)
      *grad = ((pred - label) / static_cast<T>(n * rmse)).eval();
    else
      grad->setZero(pred.rows(), pred.cols());
  }
  return static_cast<T>(rmse);
}

inline double loss_rmse(const std::vector<double>& pred, const std::vector<double>& label) {
  if (pred.size() != label.size()) throw ContractError("loss_rmse: lengths differ");
  if (pred.empty()) return 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - label[i]) * (pred[i] - label[i]);
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

}  // namespace pdnforge::nn
