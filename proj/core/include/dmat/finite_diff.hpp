#pragma once

#include <functional>

#include "dmat/tensor.hpp"

namespace dmat {

// Central-difference check of d f / d x against the tape gradient. f must
// recompute the scalar loss from the current contents of x (and may read
// other fixed tensors). Returns the max relative error over elements of x.
// Call outside any tape scope; numeric evaluations run untaped.
template <typename T>
T finite_diff_check(const std::function<Tensor<T>()>& f, Tensor<T>& x, T eps) {
  if (active_tape<T>() != nullptr)
    throw ContractError("finite_diff_check: already inside a tape scope");
  bool was_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<T> analytic;
  {
    TapeScope<T> scope;
    Tensor<T> y = f();
    scope.backward(y);
    auto g = x.grad();
    analytic.assign(g.begin(), g.end());
  }
  T worst = T(0);
  auto xs = x.values();
  for (size_t i = 0; i < xs.size(); ++i) {
    T keep = xs[i];
    xs[i] = keep + eps;
    T up = f().item();
    xs[i] = keep - eps;
    T dn = f().item();
    xs[i] = keep;
    T numeric = (up - dn) / (T(2) * eps);
    T a = analytic[i];
    T denom = std::max({T(1e-4), std::fabs(a), std::fabs(numeric)});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  x.set_requires_grad(was_rg);
  return worst;
}

// convenience: check several parameter leaves against the same loss
template <typename T>
T finite_diff_check_many(const std::function<Tensor<T>()>& f,
                         std::vector<Tensor<T>*> leaves, T eps) {
  T worst = T(0);
  for (Tensor<T>* leaf : leaves)
    worst = std::max(worst, finite_diff_check<T>(f, *leaf, eps));
  return worst;
}

}  // namespace dmat
