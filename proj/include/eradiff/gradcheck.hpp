#pragma once

#include "eradiff/tensor.hpp"

#include <functional>
#include <stdexcept>

namespace eradiff {

/// Central-difference gradient of a scalar function of one tensor.
/// `f` must be deterministic; each coordinate is evaluated twice at the
/// base point's perturbations and the unperturbed value is checked for
/// repeatability first.
template <typename Scalar>
Tensor<Scalar> finite_difference_gradient(const std::function<Scalar(const Tensor<Scalar>&)>& f,
                                          const Tensor<Scalar>& x, Scalar h) {
  if (!(h > Scalar(0))) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  const Scalar f0 = f(x.detach());
  const Scalar f1 = f(x.detach());
  if (!(f0 == f1) && !(std::isnan(f0) && std::isnan(f1)))
    throw std::runtime_error("finite_difference_gradient: f is not deterministic");

  typename Tensor<Scalar>::Array grad(x.size());
  typename Tensor<Scalar>::Array probe = x.values();
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe(i);
    probe(i) = orig + h;
    const Scalar fp = f(Tensor<Scalar>(x.shape(), probe));
    probe(i) = orig - h;
    const Scalar fm = f(Tensor<Scalar>(x.shape(), probe));
    probe(i) = orig;
    grad(i) = (fp - fm) / (Scalar(2) * h);
  }
  return Tensor<Scalar>(x.shape(), std::move(grad));
}

/// max |a - b| / max(|a|_inf, |b|_inf, floor): the relative error used by
/// every gradient check in the project.
template <typename DerivedA, typename DerivedB>
double relative_error(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b,
                      double floor = 1e-12) {
  const double scale = std::max({static_cast<double>(a.abs().maxCoeff()),
                                 static_cast<double>(b.abs().maxCoeff()), floor});
  return static_cast<double>((a - b).abs().maxCoeff()) / scale;
}

}  // namespace eradiff
