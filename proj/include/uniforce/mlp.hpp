#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uniforce/core.hpp"

namespace uniforce {

enum class Activation { Tanh, Relu };

inline const char* to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + s + "'");
}

/// Fully connected regressor with linear output and mean-squared-error loss.
///
/// Samples are stored column-wise: an input batch is (inputs x batch).
/// Scalar is float for production models and double for gradient checks.
template <typename Scalar>
class Mlp {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Gradients {
    std::vector<Mat> dW;
    std::vector<Vec> db;
    Mat dS;  // skip path, empty without one
  };

  Mlp() = default;

  /// sizes = {inputs, hidden..., outputs}. Weights use scaled uniform
  /// (Glorot for tanh, He for relu) initialisation from `rng`. With
  /// `linear_skip` the output also receives S * input, S starting at zero.
  Mlp(std::vector<int> sizes, Activation activation, Rng& rng, bool linear_skip = false)
      : sizes_(std::move(sizes)), activation_(activation) {
    if (sizes_.size() < 2) throw Error(ErrorCode::InvalidArgument, "an MLP needs at least input and output sizes");
    for (int s : sizes_)
      if (s <= 0) throw Error(ErrorCode::InvalidArgument, "layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const int fan_in = sizes_[l], fan_out = sizes_[l + 1];
      const double bound = activation_ == Activation::Tanh ? std::sqrt(6.0 / (fan_in + fan_out))
                                                           : std::sqrt(6.0 / fan_in);
      Mat W(fan_out, fan_in);
      for (int j = 0; j < fan_in; ++j)
        for (int i = 0; i < fan_out; ++i) W(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
      weights_.push_back(std::move(W));
      biases_.push_back(Vec::Zero(fan_out));
    }
    if (linear_skip) skip_ = Mat::Zero(sizes_.back(), sizes_.front());
    reset_momentum();
  }

  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  std::size_t layers() const { return weights_.size(); }
  bool has_skip() const { return skip_.size() > 0; }
  const Mat& skip() const { return skip_; }

  std::size_t parameter_count() const {
    std::size_t n = static_cast<std::size_t>(skip_.size());
    for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  /// Installs a linear skip path and output bias (e.g. from a least-squares fit).
  void set_linear_part(const Mat& S, const Vec& output_bias) {
    if (!has_skip() || S.rows() != skip_.rows() || S.cols() != skip_.cols() || output_bias.size() != outputs())
      throw Error(ErrorCode::InvalidArgument, "linear part has the wrong shape");
    skip_ = S;
    biases_.back() = output_bias;
  }

  /// Zeroes the last layer so the network starts as its linear part alone.
  void zero_output_layer() {
    weights_.back().setZero();
    biases_.back().setZero();
  }

  /// Excludes the skip path from sgd_step (it still receives gradients).
  void freeze_skip(bool frozen) { skip_frozen_ = frozen; }
  bool skip_frozen() const { return skip_frozen_; }

  Mat forward(const Mat& X) const {
    Mat h = X;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Mat z = weights_[l] * h;
      z.colwise() += biases_[l];
      if (l + 1 < weights_.size()) activate(z);
      h = std::move(z);
    }
    if (has_skip()) h.noalias() += skip_ * X;
    return h;
  }

  /// Mean over batch and outputs of the squared error.
  Scalar loss(const Mat& X, const Mat& T) const {
    const Mat diff = forward(X) - T;
    return diff.squaredNorm() / static_cast<Scalar>(diff.size());
  }

  /// Loss plus its exact parameter gradient (backpropagation).
  Scalar loss_and_gradient(const Mat& X, const Mat& T, Gradients& g) const {
    const std::size_t L = weights_.size();
    std::vector<Mat> acts;  // acts[l] is the input to layer l
    acts.reserve(L + 1);
    acts.push_back(X);
    for (std::size_t l = 0; l < L; ++l) {
      Mat z = weights_[l] * acts.back();
      z.colwise() += biases_[l];
      if (l + 1 < L) activate(z);
      acts.push_back(std::move(z));
    }
    if (has_skip()) acts.back().noalias() += skip_ * X;
    const Mat diff = acts.back() - T;
    const Scalar n = static_cast<Scalar>(diff.size());
    const Scalar value = diff.squaredNorm() / n;

    g.dW.resize(L);
    g.db.resize(L);
    Mat delta = (Scalar(2) / n) * diff;
    if (has_skip()) g.dS.noalias() = delta * X.transpose();
    for (std::size_t l = L; l-- > 0;) {
      g.dW[l].noalias() = delta * acts[l].transpose();
      g.db[l] = delta.rowwise().sum();
      if (l > 0) {
        Mat back = weights_[l].transpose() * delta;
        activation_derivative_inplace(acts[l], back);
        delta = std::move(back);
      }
    }
    return value;
  }

  /// Heavy-ball SGD: v <- mu v + g, theta <- theta - lr v.
  void sgd_step(const Gradients& g, double lr, double momentum) {
    const Scalar mu = static_cast<Scalar>(momentum), eta = static_cast<Scalar>(lr);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      vW_[l] = mu * vW_[l] + g.dW[l];
      vb_[l] = mu * vb_[l] + g.db[l];
      weights_[l] -= eta * vW_[l];
      biases_[l] -= eta * vb_[l];
    }
    if (has_skip() && !skip_frozen_) {
      vS_ = mu * vS_ + g.dS;
      skip_ -= eta * vS_;
    }
  }

  void reset_momentum() {
    vW_.clear();
    vb_.clear();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      vW_.push_back(Mat::Zero(weights_[l].rows(), weights_[l].cols()));
      vb_.push_back(Vec::Zero(biases_[l].size()));
    }
    vS_ = Mat::Zero(skip_.rows(), skip_.cols());
  }

  /// Parameters flattened layer by layer: W (column-major) then b; the skip
  /// matrix (column-major) comes last.
  std::vector<Scalar> flat_parameters() const {
    std::vector<Scalar> out;
    out.reserve(parameter_count());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.insert(out.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
      out.insert(out.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
    }
    out.insert(out.end(), skip_.data(), skip_.data() + skip_.size());
    return out;
  }

  void set_flat_parameters(const std::vector<Scalar>& flat) {
    if (flat.size() != parameter_count()) throw Error(ErrorCode::InvalidArgument, "parameter count mismatch");
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].size(); ++i) weights_[l].data()[i] = flat[k++];
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l].data()[i] = flat[k++];
    }
    for (Eigen::Index i = 0; i < skip_.size(); ++i) skip_.data()[i] = flat[k++];
  }

  static std::vector<Scalar> flatten(const Gradients& g) {
    std::vector<Scalar> out;
    for (std::size_t l = 0; l < g.dW.size(); ++l) {
      out.insert(out.end(), g.dW[l].data(), g.dW[l].data() + g.dW[l].size());
      out.insert(out.end(), g.db[l].data(), g.db[l].data() + g.db[l].size());
    }
    out.insert(out.end(), g.dS.data(), g.dS.data() + g.dS.size());
    return out;
  }

  bool operator==(const Mlp& o) const {
    if (sizes_ != o.sizes_ || activation_ != o.activation_ || has_skip() != o.has_skip()) return false;
    if (has_skip() && skip_ != o.skip_) return false;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
    return true;
  }

 private:
  void activate(Mat& z) const {
    if (activation_ == Activation::Tanh) {
      z = z.array().tanh().matrix();
    } else {
      z = z.cwiseMax(Scalar(0));
    }
  }

  /// back *= f'(pre) expressed through the post-activation value a.
  void activation_derivative_inplace(const Mat& a, Mat& back) const {
    if (activation_ == Activation::Tanh) {
      back.array() *= (Scalar(1) - a.array().square());
    } else {
      back.array() *= (a.array() > Scalar(0)).template cast<Scalar>();
    }
  }

  std::vector<int> sizes_;
  Activation activation_ = Activation::Relu;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
  std::vector<Mat> vW_;
  std::vector<Vec> vb_;
  Mat skip_;
  Mat vS_;
  bool skip_frozen_ = false;
};

struct TrainOptions {
  int steps = 1000;
  int batch = 64;
  double lr = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  int divergence_window = 500;    // consecutive steps above the divergence ratio
  double divergence_ratio = 10.0; // relative to the initial loss
};

/// Loss history plus the divergence rule shared by every trainer.
class TrainingMonitor {
 public:
  explicit TrainingMonitor(const TrainOptions& opts) : opts_(opts) {}

  void record(double loss) {
    if (!std::isfinite(loss)) throw Error(ErrorCode::Divergence, "training loss became non-finite");
    if (history_.empty()) initial_ = loss;
    history_.push_back(loss);
    if (loss > opts_.divergence_ratio * initial_) {
      if (++above_ >= opts_.divergence_window)
        throw Error(ErrorCode::Divergence, "loss stayed above 10x its initial value for 500 steps");
    } else {
      above_ = 0;
    }
  }

  const std::vector<double>& history() const { return history_; }

 private:
  TrainOptions opts_;
  std::vector<double> history_;
  double initial_ = 0.0;
  int above_ = 0;
};

/// Block means of `history` over consecutive windows of `window` steps.
inline std::vector<double> block_means(const std::vector<double>& history, std::size_t window) {
  std::vector<double> out;
  for (std::size_t start = 0; start + window <= history.size(); start += window) {
    double s = 0.0;
    for (std::size_t i = start; i < start + window; ++i) s += history[i];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace uniforce
