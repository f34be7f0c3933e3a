#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowdepth/core/autodiff.hpp"

namespace flowdepth {

// Adam over named leaf parameters. Call zero_grad, run backward on the loss,
// then step. Parameters not in the update list keep their values (frozen).
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> state;  // m, v per parameter

  explicit Adam(double learning_rate) : lr(learning_rate) {}

  static void zero_grad(const std::map<std::string, ad::Var>& params) {
    for (auto& [name, var] : params) var->zero_grad();
  }

  void step(const std::map<std::string, ad::Var>& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, var] : params) {
      if (var->grad.data.empty()) continue;  // no gradient reached this leaf
      auto it = state.find(name);
      if (it == state.end())
        it = state.emplace(name, std::make_pair(Tensor::zeros(var->val.shape),
                                                Tensor::zeros(var->val.shape))).first;
      Tensor& m = it->second.first;
      Tensor& v = it->second.second;
      for (long i = 0; i < var->val.numel(); ++i) {
        const double g = var->grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        var->val[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
  }
};

}  // namespace flowdepth
