#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "expdesign/errors.hpp"

namespace expdesign {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Prior mean of each output dimension. `IdentityState` means m_d(x, u) = x_d.
enum class MeanFunction { Zero, IdentityState };

template <typename Scalar>
struct OutputHyperparams {
  Scalar signal_variance = Scalar(0.25);
  Scalar lengthscale = Scalar(0.3);
  Scalar noise_variance = Scalar(1e-4);
};

/// One isotropic squared-exponential kernel per output dimension.
template <typename Scalar>
struct GpHyperparams {
  std::vector<OutputHyperparams<Scalar>> outputs;
  MeanFunction mean = MeanFunction::IdentityState;

  static GpHyperparams uniform(int state_dim, const OutputHyperparams<Scalar>& hp,
                               MeanFunction mean = MeanFunction::IdentityState) {
    GpHyperparams out;
    out.outputs.assign(static_cast<std::size_t>(state_dim), hp);
    out.mean = mean;
    return out;
  }

  void validate(int state_dim) const {
    if (static_cast<int>(outputs.size()) != state_dim) {
      throw DimensionError("GpHyperparams: expected " + std::to_string(state_dim) +
                           " output blocks, got " + std::to_string(outputs.size()));
    }
    for (const auto& hp : outputs) {
      if (!(hp.signal_variance > 0) || !(hp.lengthscale > 0) || !(hp.noise_variance > 0)) {
        throw std::invalid_argument("GpHyperparams: variances and lengthscale must be > 0");
      }
    }
  }
};

/// The information set: rows are (state, input, noisy next state) triples.
template <typename Scalar>
class Dataset {
 public:
  Dataset(int state_dim, int input_dim)
      : states_(0, state_dim), inputs_(0, input_dim), measurements_(0, state_dim) {}

  Dataset(MatrixX<Scalar> states, MatrixX<Scalar> inputs, MatrixX<Scalar> measurements)
      : states_(std::move(states)), inputs_(std::move(inputs)), measurements_(std::move(measurements)) {
    if (states_.rows() != inputs_.rows() || states_.rows() != measurements_.rows()) {
      throw DimensionError("Dataset: row counts of states, inputs and measurements differ");
    }
    if (states_.cols() != measurements_.cols()) {
      throw DimensionError("Dataset: measurement dimension must equal state dimension");
    }
    if (!states_.allFinite() || !inputs_.allFinite() || !measurements_.allFinite()) {
      throw std::invalid_argument("Dataset: non-finite entry");
    }
  }

  int size() const { return static_cast<int>(states_.rows()); }
  bool empty() const { return size() == 0; }
  int state_dim() const { return static_cast<int>(states_.cols()); }
  int input_dim() const { return static_cast<int>(inputs_.cols()); }
  int index_dim() const { return state_dim() + input_dim(); }

  const MatrixX<Scalar>& states() const { return states_; }
  const MatrixX<Scalar>& inputs() const { return inputs_; }
  const MatrixX<Scalar>& measurements() const { return measurements_; }

  /// Training indices z_i = (x_i, u_i), one per row.
  MatrixX<Scalar> indices() const {
    MatrixX<Scalar> z(size(), index_dim());
    z << states_, inputs_;
    return z;
  }

 private:
  MatrixX<Scalar> states_;
  MatrixX<Scalar> inputs_;
  MatrixX<Scalar> measurements_;
};

/// D ∪ (xs, us, ys). Duplicates are kept; the original dataset is untouched.
template <typename Scalar>
Dataset<Scalar> augment(const Dataset<Scalar>& data, const Eigen::Ref<const MatrixX<Scalar>>& xs,
                        const Eigen::Ref<const MatrixX<Scalar>>& us,
                        const Eigen::Ref<const MatrixX<Scalar>>& ys) {
  if (xs.rows() != us.rows() || xs.rows() != ys.rows()) {
    throw DimensionError("augment: trajectory sequences have different lengths");
  }
  if (xs.rows() == 0) return data;
  if (xs.cols() != data.state_dim() || ys.cols() != data.state_dim() || us.cols() != data.input_dim()) {
    throw DimensionError("augment: trajectory dimensions do not match the dataset");
  }
  const Eigen::Index m = data.size();
  const Eigen::Index n = xs.rows();
  MatrixX<Scalar> x(m + n, data.state_dim());
  MatrixX<Scalar> u(m + n, data.input_dim());
  MatrixX<Scalar> y(m + n, data.state_dim());
  x << data.states(), xs;
  u << data.inputs(), us;
  y << data.measurements(), ys;
  return Dataset<Scalar>(std::move(x), std::move(u), std::move(y));
}

/// σ_f² exp(-‖z1 - z2‖² / (2ℓ²)).
template <typename Scalar, typename Derived1, typename Derived2>
Scalar kernel_eval(const Eigen::MatrixBase<Derived1>& z1, const Eigen::MatrixBase<Derived2>& z2,
                   const OutputHyperparams<Scalar>& hp) {
  if (z1.size() != z2.size()) throw DimensionError("kernel_eval: index dimensions differ");
  const Scalar sq = (z1 - z2).squaredNorm();
  return hp.signal_variance * std::exp(-sq / (Scalar(2) * hp.lengthscale * hp.lengthscale));
}

/// Cross-covariance matrix between the rows of `a` and the rows of `b`.
template <typename Scalar>
MatrixX<Scalar> kernel_matrix(const Eigen::Ref<const MatrixX<Scalar>>& a,
                              const Eigen::Ref<const MatrixX<Scalar>>& b,
                              const OutputHyperparams<Scalar>& hp) {
  if (a.cols() != b.cols()) throw DimensionError("kernel_matrix: index dimensions differ");
  const Scalar inv_two_l2 = Scalar(1) / (Scalar(2) * hp.lengthscale * hp.lengthscale);
  const VectorX<Scalar> an = a.rowwise().squaredNorm();
  const VectorX<Scalar> bn = b.rowwise().squaredNorm();
  MatrixX<Scalar> k = Scalar(-2) * (a * b.transpose());
  k.colwise() += an;
  k.rowwise() += bn.transpose();
  // Clamp rounding noise from the expanded square.
  return hp.signal_variance * (-(k.cwiseMax(Scalar(0))) * inv_two_l2).array().exp().matrix();
}

template <typename Scalar>
MatrixX<Scalar> prior_mean(MeanFunction mean, const Eigen::Ref<const MatrixX<Scalar>>& indices, int state_dim) {
  if (mean == MeanFunction::Zero) return MatrixX<Scalar>::Zero(indices.rows(), state_dim);
  return indices.leftCols(state_dim);
}

/// Per-output posterior moments, one row per query.
template <typename Scalar>
struct Moments {
  MatrixX<Scalar> mean;
  MatrixX<Scalar> variance;
};

/// Cholesky of a symmetric positive-definite matrix with one jitter retry.
/// Throws NumericalError naming `what` when both attempts fail.
template <typename Scalar>
Eigen::LLT<MatrixX<Scalar>> robust_cholesky(MatrixX<Scalar> a, Scalar jitter, const std::string& what) {
  Eigen::LLT<MatrixX<Scalar>> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  a.diagonal().array() += jitter;
  llt.compute(a);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(what + ": regularized kernel matrix is not positive definite");
  }
  return llt;
}

/// Independent-output GP posterior over the dynamics, pre-factorized at fit time.
///
/// Immutable after construction; all queries are const and thread-safe.
template <typename Scalar>
class GaussianProcess {
 public:
  struct OutputFactor {
    Eigen::LLT<MatrixX<Scalar>> llt;  // of K_ZZ + σ_w² I
    VectorX<Scalar> alpha;            // (K_ZZ + σ_w² I)^{-1} (Y - m(Z))
    VectorX<Scalar> whitened;         // L^{-1} (Y - m(Z))
  };

  static GaussianProcess fit(Dataset<Scalar> data, GpHyperparams<Scalar> hp) {
    hp.validate(data.state_dim());
    GaussianProcess gp(std::move(data), std::move(hp));
    gp.factorize();
    return gp;
  }

  const Dataset<Scalar>& data() const { return data_; }
  const GpHyperparams<Scalar>& hyperparams() const { return hp_; }
  const MatrixX<Scalar>& training_indices() const { return z_; }
  const OutputFactor& factor(int d) const { return factors_.at(static_cast<std::size_t>(d)); }
  int state_dim() const { return data_.state_dim(); }
  int input_dim() const { return data_.input_dim(); }

  /// Lower-triangular factor of (K_ZZ^d + σ_{w,d}² I).
  MatrixX<Scalar> lower_factor(int d) const { return factor(d).llt.matrixL(); }

  /// Moments at a batch of indices (rows of `queries`, each z = (x, u)).
  Moments<Scalar> moments(const Eigen::Ref<const MatrixX<Scalar>>& queries) const {
    if (queries.cols() != data_.index_dim()) throw DimensionError("moments: query dimension mismatch");
    const int nx = state_dim();
    Moments<Scalar> out{prior_mean<Scalar>(hp_.mean, queries, nx),
                        MatrixX<Scalar>(queries.rows(), nx)};
    for (int d = 0; d < nx; ++d) {
      const auto& hp = hp_.outputs[static_cast<std::size_t>(d)];
      if (data_.empty()) {
        out.variance.col(d).setConstant(hp.signal_variance + hp.noise_variance);
        continue;
      }
      const auto& f = factors_[static_cast<std::size_t>(d)];
      const MatrixX<Scalar> k_zq = kernel_matrix<Scalar>(z_, queries, hp);
      out.mean.col(d).noalias() += k_zq.transpose() * f.alpha;
      const MatrixX<Scalar> v = f.llt.matrixL().solve(k_zq);
      const VectorX<Scalar> reduction = v.colwise().squaredNorm().transpose();
      out.variance.col(d) = ((hp.signal_variance - reduction.array()).cwiseMax(Scalar(0)) + hp.noise_variance).matrix();
    }
    return out;
  }

  Moments<Scalar> moments(const Eigen::Ref<const VectorX<Scalar>>& x,
                          const Eigen::Ref<const VectorX<Scalar>>& u) const {
    if (x.size() != state_dim() || u.size() != input_dim()) {
      throw DimensionError("moments: state or input dimension mismatch");
    }
    MatrixX<Scalar> z(1, data_.index_dim());
    z << x.transpose(), u.transpose();
    return moments(z);
  }

 private:
  GaussianProcess(Dataset<Scalar> data, GpHyperparams<Scalar> hp)
      : data_(std::move(data)), hp_(std::move(hp)), z_(data_.indices()) {}

  void factorize() {
    const int nx = state_dim();
    factors_.clear();
    factors_.reserve(static_cast<std::size_t>(nx));
    const MatrixX<Scalar> residual = data_.measurements() - prior_mean<Scalar>(hp_.mean, z_, nx);
    for (int d = 0; d < nx; ++d) {
      const auto& hp = hp_.outputs[static_cast<std::size_t>(d)];
      OutputFactor f;
      if (!data_.empty()) {
        MatrixX<Scalar> k = kernel_matrix<Scalar>(z_, z_, hp);
        k.diagonal().array() += hp.noise_variance;
        f.llt = robust_cholesky<Scalar>(std::move(k), Scalar(1e-10) * hp.signal_variance,
                                        "fit (output dimension " + std::to_string(d) + ")");
        f.whitened = f.llt.matrixL().solve(residual.col(d));
        f.alpha = f.llt.matrixU().solve(f.whitened);
      }
      factors_.push_back(std::move(f));
    }
  }

  Dataset<Scalar> data_;
  GpHyperparams<Scalar> hp_;
  MatrixX<Scalar> z_;
  std::vector<OutputFactor> factors_;
};

/// Posterior moments on a fixed query set, reusable across many "base data plus
/// a short extra trajectory" datasets.
///
/// Conditioning a GP on D and then on extra observations E gives the same
/// Gaussian as conditioning on D ∪ E at once, so the expensive solve against
/// the base factor is done once here and each `moments_with` call only pays
/// for the |E| new rows.
template <typename Scalar>
class CachedQueryPosterior {
 public:
  CachedQueryPosterior(GaussianProcess<Scalar> base, MatrixX<Scalar> queries)
      : base_(std::move(base)), queries_(std::move(queries)) {
    if (queries_.cols() != base_.data().index_dim()) {
      throw DimensionError("CachedQueryPosterior: query dimension mismatch");
    }
    const int nx = base_.state_dim();
    base_moments_ = base_.moments(queries_);
    whitened_cross_.resize(static_cast<std::size_t>(nx));
    for (int d = 0; d < nx; ++d) {
      if (base_.data().empty()) continue;
      const auto& hp = base_.hyperparams().outputs[static_cast<std::size_t>(d)];
      whitened_cross_[static_cast<std::size_t>(d)] =
          base_.factor(d).llt.matrixL().solve(kernel_matrix<Scalar>(base_.training_indices(), queries_, hp));
    }
  }

  const GaussianProcess<Scalar>& base() const { return base_; }
  const MatrixX<Scalar>& queries() const { return queries_; }
  const Moments<Scalar>& base_moments() const { return base_moments_; }

  /// Moments at the cached queries given base data ∪ `extra`.
  Moments<Scalar> moments_with(const Dataset<Scalar>& extra) const {
    if (extra.empty()) return base_moments_;
    if (extra.state_dim() != base_.state_dim() || extra.input_dim() != base_.input_dim()) {
      throw DimensionError("moments_with: extra data dimension mismatch");
    }
    const int nx = base_.state_dim();
    const MatrixX<Scalar> ze = extra.indices();
    const Moments<Scalar> at_extra = base_.moments(ze);
    Moments<Scalar> out = base_moments_;
    for (int d = 0; d < nx; ++d) {
      const auto& hp = base_.hyperparams().outputs[static_cast<std::size_t>(d)];
      MatrixX<Scalar> cross = kernel_matrix<Scalar>(ze, queries_, hp);  // |E| x Q
      MatrixX<Scalar> s = kernel_matrix<Scalar>(ze, ze, hp);
      if (!base_.data().empty()) {
        const auto& f = base_.factor(d);
        const MatrixX<Scalar> b = f.llt.matrixL().solve(kernel_matrix<Scalar>(base_.training_indices(), ze, hp));
        cross.noalias() -= b.transpose() * whitened_cross_[static_cast<std::size_t>(d)];
        s.noalias() -= b.transpose() * b;
      }
      s.diagonal().array() += hp.noise_variance;
      const auto llt = robust_cholesky<Scalar>(std::move(s), Scalar(1e-10) * hp.signal_variance,
                                               "conditioning (output dimension " + std::to_string(d) + ")");
      const VectorX<Scalar> innovation = extra.measurements().col(d) - at_extra.mean.col(d);
      const VectorX<Scalar> w = llt.matrixL().solve(innovation);
      const MatrixX<Scalar> v = llt.matrixL().solve(cross);
      out.mean.col(d).noalias() += v.transpose() * w;
      const VectorX<Scalar> reduction = v.colwise().squaredNorm().transpose();
      out.variance.col(d) = (out.variance.col(d).array() - reduction.array()).cwiseMax(hp.noise_variance).matrix();
    }
    return out;
  }

 private:
  GaussianProcess<Scalar> base_;
  MatrixX<Scalar> queries_;
  Moments<Scalar> base_moments_;
  std::vector<MatrixX<Scalar>> whitened_cross_;  // L_d^{-1} K(Z, Q) per output
};

using Datasetd = Dataset<double>;
using GpHyperparamsd = GpHyperparams<double>;
using GaussianProcessd = GaussianProcess<double>;

}  // namespace expdesign
