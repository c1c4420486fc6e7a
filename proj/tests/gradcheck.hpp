#pragma once

// Finite-difference gradient checking of the bridge losses in f64, shared by
// the unit tests and the acceptance suite.

#include <functional>
#include <string>
#include <vector>

#include "chef/backbones.hpp"
#include "chef/bridge.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Summary {
  double max_rel = 0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string first_failure;
};

// build(tape, lm, bridge) returns the scalar loss node. Every coordinate of
// every trainable parameter is perturbed with h=1e-5 and compared against the
// analytic gradient at relative tolerance 1e-4.
template <class BuildLoss>
Summary check_loss(const chef::BackbonesT<double>& bb, chef::BridgeParamsT<double> params,
                   BuildLoss build) {
  using namespace chef;
  Summary summary;

  std::vector<TensorT<double>> analytic;
  {
    Tape<double> tp;
    LmGraph<double> lm(tp, bb.lm, false);
    BridgeGraph<double> bg(tp, params, /*trainable=*/true);
    tp.backward(build(tp, lm, bg));
    for (const auto& [name, var] : bg.named) analytic.push_back(tp.grad(var));
  }

  auto value = [&]() {
    Tape<double> tp;
    LmGraph<double> lm(tp, bb.lm, false);
    BridgeGraph<double> bg(tp, params, /*trainable=*/false);
    return tp.value(build(tp, lm, bg)).data[0];
  };

  std::size_t tensor_index = 0;
  params.for_each_param([&](const std::string& name, TensorT<double>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double fd = oracle::central_diff(value, t.data[i], 1e-5);
      double rel = 0;
      const bool ok = oracle::grads_match(analytic[tensor_index].data[i], fd, 1e-4, &rel);
      summary.max_rel = std::max(summary.max_rel, rel);
      ++summary.checked;
      if (!ok) {
        ++summary.failures;
        if (summary.first_failure.empty())
          summary.first_failure = name + "[" + std::to_string(i) +
                                  "]: analytic=" + std::to_string(analytic[tensor_index].data[i]) +
                                  " fd=" + std::to_string(fd);
      }
    }
    ++tensor_index;
  });
  return summary;
}

}  // namespace gradcheck
