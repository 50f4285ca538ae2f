#include "vct/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vct {
namespace {

double eval_scalar(const Tensor<double>& y) {
  if (y.size() != 1) throw GradCheckError("grad_check: function is not scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw GradCheckError("grad_check: non-finite function value " + std::to_string(v));
  return v;
}

void consider(GradCheckResult& r, std::size_t index, double ad, double fd) {
  if (!std::isfinite(ad) || !std::isfinite(fd)) {
    throw GradCheckError("grad_check: non-finite gradient at element " + std::to_string(index));
  }
  const double e = relative_error(ad, fd);
  if (r.checked == 0 || e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst_index = index;
    r.autodiff = ad;
    r.numeric = fd;
  }
  ++r.checked;
}

// Fourth-order central stencil: truncation error O(eps^4).
template <typename Eval>
double central_difference(Eval at, double orig, double eps) {
  const double f1 = at(orig + eps) - at(orig - eps);
  const double f2 = at(orig + 2.0 * eps) - at(orig - 2.0 * eps);
  return (8.0 * f1 - f2) / (12.0 * eps);
}

}  // namespace

double relative_error(double autodiff, double numeric) {
  const double denom = std::max({std::abs(autodiff), std::abs(numeric), 1e-8});
  return std::abs(autodiff - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double eps) {
  Tensor<double> leaf(x.dims(), std::vector<double>(x.values().begin(), x.values().end()), true);
  const Tensor<double> y = f(leaf);
  eval_scalar(y);
  y.backward();
  std::vector<double> ad(leaf.size(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), ad.begin());

  GradCheckResult r;
  NoGradGuard no_grad;
  std::vector<double> probe(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    const double fd = central_difference(
        [&](double v) {
          probe[i] = v;
          return eval_scalar(f(Tensor<double>(x.dims(), probe)));
        },
        orig, eps);
    probe[i] = orig;
    consider(r, i, ad[i], fd);
  }
  return r;
}

GradCheckResult grad_check_params(const std::function<Tensor<double>()>& loss,
                                  std::vector<Tensor<double>> params, double eps,
                                  std::size_t max_per_tensor) {
  for (auto& p : params) p.zero_grad();
  {
    const Tensor<double> y = loss();
    eval_scalar(y);
    y.backward();
  }
  GradCheckResult r;
  std::size_t offset = 0;
  NoGradGuard no_grad;
  for (auto& p : params) {
    const std::size_t n = p.size();
    std::vector<double> ad(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), ad.begin());
    const std::size_t count = (max_per_tensor == 0) ? n : std::min(n, max_per_tensor);
    auto values = p.mutable_values();
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t i = (count == n) ? s : (s * n) / count + (n / count) / 2;
      const double orig = values[i];
      const double fd = central_difference(
          [&](double v) {
            values[i] = v;
            return eval_scalar(loss());
          },
          orig, eps);
      values[i] = orig;
      consider(r, offset + i, ad[i], fd);
    }
    offset += n;
  }
  return r;
}

}  // namespace vct
