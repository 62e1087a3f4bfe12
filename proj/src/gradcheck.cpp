#include "mmpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mmpt {

Real finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                             const Tensor& x0, Real h) {
    Tensor x(x0.shape(), x0.data(), /*requires_grad=*/true);
    Tensor y = f(x);
    if (y.numel() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
    y.backward();
    const std::vector<Real> analytic = x.grad();

    Real worst = 0.0;
    NoGradGuard no_grad;
    for (size_t i = 0; i < x0.data().size(); ++i) {
        const Real step = h * std::max<Real>(1.0, std::fabs(x0.data()[i]));
        std::vector<Real> bumped = x0.data();
        bumped[i] = x0.data()[i] + step;
        const Real up = f(Tensor(x0.shape(), bumped)).item();
        bumped[i] = x0.data()[i] - step;
        const Real down = f(Tensor(x0.shape(), bumped)).item();
        const Real numeric = (up - down) / (2.0 * step);
        const Real denom = std::max<Real>({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace mmpt
