#pragma once

// Central finite-difference gradient checking against the autograd path.
// The loss builder is re-invoked for every probe so the graph is rebuilt
// around the perturbed parameter values.

#include "sepkit/autograd.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace sepkit::testing {

struct FdReport {
  double max_rel_err = 0.0;
  long checked = 0;
};

inline FdReport fd_check(const std::vector<ag::Var>& params,
                         const std::function<ag::Var()>& make_loss, double h = 1e-5) {
  for (const auto& p : params) const_cast<ag::Var&>(p).zero_grad();
  ag::Var loss = make_loss();
  ag::backward(loss);

  std::vector<ag::Mat> analytic;
  for (const auto& p : params)
    analytic.push_back(p.grad().size() ? p.grad()
                                       : ag::Mat::Zero(p.rows(), p.cols()));

  FdReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ag::Mat& v = const_cast<ag::Var&>(params[pi]).value();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double saved = v(i, j);
        v(i, j) = saved + h;
        const double lp = make_loss().value()(0, 0);
        v(i, j) = saved - h;
        const double lm = make_loss().value()(0, 0);
        v(i, j) = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double a = analytic[pi](i, j);
        if (std::abs(a) < 1e-7 && std::abs(fd) < 1e-7) continue;
        const double rel = std::abs(a - fd) / std::max(std::abs(a), std::abs(fd));
        report.max_rel_err = std::max(report.max_rel_err, rel);
        ++report.checked;
      }
    }
  }
  for (const auto& p : params) const_cast<ag::Var&>(p).zero_grad();
  return report;
}

}  // namespace sepkit::testing
