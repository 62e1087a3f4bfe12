#include "mmpt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mmpt {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

Real sigmoid(Real x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<Real> v(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    std::vector<Real> v(static_cast<size_t>(shape_numel(shape)), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(Real value) { return Tensor({1}, {value}); }

Real Tensor::item() const {
    if (!node_ || node_->data.size() != 1) {
        throw ShapeError("item: tensor is not a scalar");
    }
    return node_->data[0];
}

const std::vector<Real>& Tensor::grad() const {
    if (!node_ || node_->grad.empty()) {
        throw Error("grad: gradient has not been populated");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::drop_grad() { node_->grad.clear(); }

using BackFn = std::function<void(const std::vector<Real>&,
                                  const std::function<std::vector<Real>&(detail::Node*)>&)>;

Tensor make_op(Shape shape, std::vector<Real> data, std::vector<Tensor> inputs,
               BackFn backprop) {
    auto n = std::make_shared<detail::Node>();
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("op: result does not fill shape " + shape_str(shape));
    }
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool req = false;
    if (g_grad_enabled) {
        for (const auto& t : inputs) req = req || t.requires_grad();
    }
    n->requires_grad = req;
    if (req) {
        for (const auto& t : inputs) n->parents.push_back(t.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

void Tensor::backward() const {
    if (!node_ || node_->data.size() != 1) {
        throw ShapeError("backward: result must be a scalar");
    }
    if (!node_->requires_grad) return;

    // Topological order over the subgraph that requires gradients.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        if (idx < cur->parents.size()) {
            detail::Node* p = cur->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    // Per-pass gradients; leaf results are folded into persistent buffers at
    // the end so repeated backward calls accumulate.
    std::unordered_map<detail::Node*, std::vector<Real>> pass;
    auto grad_of = [&pass](detail::Node* n) -> std::vector<Real>& {
        auto& g = pass[n];
        if (g.empty()) g.assign(n->data.size(), 0.0);
        return g;
    };
    grad_of(node_.get())[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* cur = *it;
        auto found = pass.find(cur);
        if (found == pass.end()) continue;
        if (cur->backprop) {
            cur->backprop(found->second, grad_of);
        } else {
            if (cur->grad.empty()) cur->grad.assign(cur->data.size(), 0.0);
            const auto& g = found->second;
            for (size_t i = 0; i < g.size(); ++i) cur->grad[i] += g[i];
        }
    }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<Real> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    detail::Node* pa = a.node().get();
    detail::Node* pb = b.node().get();
    return make_op(a.shape(), std::move(out), {a, b},
                   [pa, pb](const std::vector<Real>& g, const auto& grad_of) {
                       if (pa->requires_grad) {
                           auto& ga = grad_of(pa);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (pb->requires_grad) {
                           auto& gb = grad_of(pb);
                           for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                       }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<Real> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    detail::Node* pa = a.node().get();
    detail::Node* pb = b.node().get();
    return make_op(a.shape(), std::move(out), {a, b},
                   [pa, pb](const std::vector<Real>& g, const auto& grad_of) {
                       if (pa->requires_grad) {
                           auto& ga = grad_of(pa);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (pb->requires_grad) {
                           auto& gb = grad_of(pb);
                           for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<Real> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    detail::Node* pa = a.node().get();
    detail::Node* pb = b.node().get();
    return make_op(a.shape(), std::move(out), {a, b},
                   [pa, pb](const std::vector<Real>& g, const auto& grad_of) {
                       if (pa->requires_grad) {
                           auto& ga = grad_of(pa);
                           for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i];
                       }
                       if (pb->requires_grad) {
                           auto& gb = grad_of(pb);
                           for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->data[i];
                       }
                   });
}

Tensor scale(const Tensor& x, Real c) {
    std::vector<Real> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    detail::Node* px = x.node().get();
    return make_op(x.shape(), std::move(out), {x},
                   [px, c](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
                   });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: scale must have one element");
    const Real c = s.data()[0];
    std::vector<Real> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    detail::Node* px = x.node().get();
    detail::Node* ps = s.node().get();
    return make_op(x.shape(), std::move(out), {x, s},
                   [px, ps, c](const std::vector<Real>& g, const auto& grad_of) {
                       if (px->requires_grad) {
                           auto& gx = grad_of(px);
                           for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
                       }
                       if (ps->requires_grad) {
                           Real acc = 0.0;
                           for (size_t i = 0; i < g.size(); ++i) acc += g[i] * px->data[i];
                           grad_of(ps)[0] += acc;
                       }
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || x.dim(x.rank() - 1) != bias.dim(0)) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match " + shape_str(x.shape()));
    }
    const size_t d = static_cast<size_t>(bias.dim(0));
    std::vector<Real> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + bias.data()[i % d];
    detail::Node* px = x.node().get();
    detail::Node* pb = bias.node().get();
    return make_op(x.shape(), std::move(out), {x, bias},
                   [px, pb, d](const std::vector<Real>& g, const auto& grad_of) {
                       if (px->requires_grad) {
                           auto& gx = grad_of(px);
                           for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (pb->requires_grad) {
                           auto& gb = grad_of(pb);
                           for (size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                       }
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<Real> out(static_cast<size_t>(m * n));
    {
        CMap ma(a.data().data(), m, k);
        CMap mb(b.data().data(), k, n);
        MMap mo(out.data(), m, n);
        mo.noalias() = ma * mb;
    }
    detail::Node* pa = a.node().get();
    detail::Node* pb = b.node().get();
    return make_op({m, n}, std::move(out), {a, b},
                   [pa, pb, m, k, n](const std::vector<Real>& g, const auto& grad_of) {
                       CMap mg(g.data(), m, n);
                       if (pa->requires_grad) {
                           CMap mb(pb->data.data(), k, n);
                           MMap ga(grad_of(pa).data(), m, k);
                           ga.noalias() += mg * mb.transpose();
                       }
                       if (pb->requires_grad) {
                           CMap ma(pa->data.data(), m, k);
                           MMap gb(grad_of(pb).data(), k, n);
                           gb.noalias() += ma.transpose() * mg;
                       }
                   });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw ShapeError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
    }
    const int64_t h = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<Real> out(static_cast<size_t>(h * m * n));
    for (int64_t i = 0; i < h; ++i) {
        CMap ma(a.data().data() + i * m * k, m, k);
        CMap mb(b.data().data() + i * k * n, k, n);
        MMap mo(out.data() + i * m * n, m, n);
        mo.noalias() = ma * mb;
    }
    detail::Node* pa = a.node().get();
    detail::Node* pb = b.node().get();
    return make_op({h, m, n}, std::move(out), {a, b},
                   [pa, pb, h, m, k, n](const std::vector<Real>& g, const auto& grad_of) {
                       for (int64_t i = 0; i < h; ++i) {
                           CMap mg(g.data() + i * m * n, m, n);
                           if (pa->requires_grad) {
                               CMap mb(pb->data.data() + i * k * n, k, n);
                               MMap ga(grad_of(pa).data() + i * m * k, m, k);
                               ga.noalias() += mg * mb.transpose();
                           }
                           if (pb->requires_grad) {
                               CMap ma(pa->data.data() + i * m * k, m, k);
                               MMap gb(grad_of(pb).data() + i * k * n, k, n);
                               gb.noalias() += ma.transpose() * mg;
                           }
                       }
                   });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expects rank 2, got " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    std::vector<Real> out(x.data().size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out[static_cast<size_t>(j * m + i)] = x.data()[static_cast<size_t>(i * n + j)];
    detail::Node* px = x.node().get();
    return make_op({n, m}, std::move(out), {x},
                   [px, m, n](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (int64_t i = 0; i < m; ++i)
                           for (int64_t j = 0; j < n; ++j)
                               gx[static_cast<size_t>(i * n + j)] +=
                                   g[static_cast<size_t>(j * m + i)];
                   });
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("transpose_last2: expects rank 3, got " + shape_str(x.shape()));
    const int64_t h = x.dim(0), m = x.dim(1), n = x.dim(2);
    std::vector<Real> out(x.data().size());
    for (int64_t b = 0; b < h; ++b)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                out[static_cast<size_t>((b * n + j) * m + i)] =
                    x.data()[static_cast<size_t>((b * m + i) * n + j)];
    detail::Node* px = x.node().get();
    return make_op({h, n, m}, std::move(out), {x},
                   [px, h, m, n](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (int64_t b = 0; b < h; ++b)
                           for (int64_t i = 0; i < m; ++i)
                               for (int64_t j = 0; j < n; ++j)
                                   gx[static_cast<size_t>((b * m + i) * n + j)] +=
                                       g[static_cast<size_t>((b * n + j) * m + i)];
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<Real> out = x.data();
    detail::Node* px = x.node().get();
    return make_op(std::move(shape), std::move(out), {x},
                   [px](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

Tensor split_heads(const Tensor& x, int heads) {
    if (x.rank() != 2 || x.dim(1) % heads != 0) {
        throw ShapeError("split_heads: " + shape_str(x.shape()) + " does not divide into " +
                         std::to_string(heads) + " heads");
    }
    const int64_t t = x.dim(0), hd = x.dim(1), d = hd / heads;
    std::vector<Real> out(x.data().size());
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t tt = 0; tt < t; ++tt)
            for (int64_t j = 0; j < d; ++j)
                out[static_cast<size_t>((hh * t + tt) * d + j)] =
                    x.data()[static_cast<size_t>(tt * hd + hh * d + j)];
    detail::Node* px = x.node().get();
    return make_op({heads, t, d}, std::move(out), {x},
                   [px, heads, t, hd, d](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (int64_t hh = 0; hh < heads; ++hh)
                           for (int64_t tt = 0; tt < t; ++tt)
                               for (int64_t j = 0; j < d; ++j)
                                   gx[static_cast<size_t>(tt * hd + hh * d + j)] +=
                                       g[static_cast<size_t>((hh * t + tt) * d + j)];
                   });
}

Tensor merge_heads(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("merge_heads: expects rank 3, got " + shape_str(x.shape()));
    const int64_t heads = x.dim(0), t = x.dim(1), d = x.dim(2), hd = heads * d;
    std::vector<Real> out(x.data().size());
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t tt = 0; tt < t; ++tt)
            for (int64_t j = 0; j < d; ++j)
                out[static_cast<size_t>(tt * hd + hh * d + j)] =
                    x.data()[static_cast<size_t>((hh * t + tt) * d + j)];
    detail::Node* px = x.node().get();
    return make_op({t, hd}, std::move(out), {x},
                   [px, heads, t, d, hd](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (int64_t hh = 0; hh < heads; ++hh)
                           for (int64_t tt = 0; tt < t; ++tt)
                               for (int64_t j = 0; j < d; ++j)
                                   gx[static_cast<size_t>((hh * t + tt) * d + j)] +=
                                       g[static_cast<size_t>(tt * hd + hh * d + j)];
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
    const int64_t cols = parts[0].dim(1);
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols) {
            throw ShapeError("concat_rows: column mismatch at " + shape_str(p.shape()));
        }
        rows += p.dim(0);
    }
    std::vector<Real> out;
    out.reserve(static_cast<size_t>(rows * cols));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<detail::Node*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) raw.push_back(p.node().get());
    return make_op({rows, cols}, std::move(out), parts,
                   [raw](const std::vector<Real>& g, const auto& grad_of) {
                       size_t off = 0;
                       for (detail::Node* p : raw) {
                           const size_t n = p->data.size();
                           if (p->requires_grad) {
                               auto& gp = grad_of(p);
                               for (size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                           }
                           off += n;
                       }
                   });
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end) {
    if (x.rank() != 2 || begin < 0 || end > x.dim(0) || begin > end) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " + shape_str(x.shape()));
    }
    const int64_t cols = x.dim(1);
    std::vector<Real> out(x.data().begin() + begin * cols, x.data().begin() + end * cols);
    detail::Node* px = x.node().get();
    return make_op({end - begin, cols}, std::move(out), {x},
                   [px, begin, cols](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       const size_t off = static_cast<size_t>(begin * cols);
                       for (size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
                   });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2");
    const int64_t vocab = table.dim(0), d = table.dim(1);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) {
            throw DataError("embedding: id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " outside table of " + std::to_string(vocab));
        }
    }
    std::vector<Real> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        const Real* src = table.data().data() + static_cast<size_t>(ids[i]) * d;
        std::copy(src, src + d, out.data() + i * static_cast<size_t>(d));
    }
    detail::Node* pt = table.node().get();
    std::vector<int> ids_copy = ids;
    return make_op({static_cast<int64_t>(ids.size()), d}, std::move(out), {table},
                   [pt, ids_copy, d](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gt = grad_of(pt);
                       for (size_t i = 0; i < ids_copy.size(); ++i) {
                           Real* dst = gt.data() + static_cast<size_t>(ids_copy[i]) * d;
                           const Real* src = g.data() + i * static_cast<size_t>(d);
                           for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
    const int64_t d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
        throw ShapeError("layer_norm: gain/bias do not match " + shape_str(x.shape()));
    }
    const int64_t rows = x.numel() / d;
    std::vector<Real> out(x.data().size());
    std::vector<Real> xhat(x.data().size());
    std::vector<Real> rstd(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const Real* xr = x.data().data() + r * d;
        Real mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<Real>(d);
        Real var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<Real>(d);
        const Real rs = 1.0 / std::sqrt(var + eps);
        rstd[static_cast<size_t>(r)] = rs;
        for (int64_t j = 0; j < d; ++j) {
            const Real h = (xr[j] - mu) * rs;
            xhat[static_cast<size_t>(r * d + j)] = h;
            out[static_cast<size_t>(r * d + j)] =
                gain.data()[static_cast<size_t>(j)] * h + bias.data()[static_cast<size_t>(j)];
        }
    }
    detail::Node* px = x.node().get();
    detail::Node* pg = gain.node().get();
    detail::Node* pb = bias.node().get();
    return make_op(x.shape(), std::move(out), {x, gain, bias},
                   [px, pg, pb, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](
                       const std::vector<Real>& g, const auto& grad_of) {
                       if (px->requires_grad) {
                           auto& gx = grad_of(px);
                           for (int64_t r = 0; r < rows; ++r) {
                               const Real* gr = g.data() + r * d;
                               const Real* hr = xhat.data() + r * d;
                               Real m1 = 0.0, m2 = 0.0;
                               for (int64_t j = 0; j < d; ++j) {
                                   const Real dh = gr[j] * pg->data[static_cast<size_t>(j)];
                                   m1 += dh;
                                   m2 += dh * hr[j];
                               }
                               m1 /= static_cast<Real>(d);
                               m2 /= static_cast<Real>(d);
                               const Real rs = rstd[static_cast<size_t>(r)];
                               for (int64_t j = 0; j < d; ++j) {
                                   const Real dh = gr[j] * pg->data[static_cast<size_t>(j)];
                                   gx[static_cast<size_t>(r * d + j)] +=
                                       rs * (dh - m1 - hr[j] * m2);
                               }
                           }
                       }
                       if (pg->requires_grad) {
                           auto& gg = grad_of(pg);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t j = 0; j < d; ++j)
                                   gg[static_cast<size_t>(j)] +=
                                       g[static_cast<size_t>(r * d + j)] *
                                       xhat[static_cast<size_t>(r * d + j)];
                       }
                       if (pb->requires_grad) {
                           auto& gb = grad_of(pb);
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t j = 0; j < d; ++j)
                                   gb[static_cast<size_t>(j)] += g[static_cast<size_t>(r * d + j)];
                       }
                   });
}

Tensor silu(const Tensor& x) {
    std::vector<Real> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = x.data()[i] * sigmoid(x.data()[i]);
    }
    detail::Node* px = x.node().get();
    return make_op(x.shape(), std::move(out), {x},
                   [px](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t i = 0; i < g.size(); ++i) {
                           const Real s = sigmoid(px->data[i]);
                           gx[i] += g[i] * (s + px->data[i] * s * (1.0 - s));
                       }
                   });
}

Tensor tanh_t(const Tensor& x) {
    std::vector<Real> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
    detail::Node* px = x.node().get();
    std::vector<Real> saved = out;
    return make_op(x.shape(), std::move(out), {x},
                   [px, saved = std::move(saved)](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t i = 0; i < g.size(); ++i)
                           gx[i] += g[i] * (1.0 - saved[i] * saved[i]);
                   });
}

namespace {

// Shared softmax kernel; a null mask admits every entry.
Tensor softmax_impl(const Tensor& x, const std::vector<uint8_t>* allowed) {
    const int64_t d = x.dim(x.rank() - 1);
    int64_t mask_rows = 1;
    if (allowed) {
        if (x.rank() < 2) throw ShapeError("masked softmax: needs at least rank 2");
        mask_rows = x.dim(x.rank() - 2);
        if (static_cast<int64_t>(allowed->size()) != mask_rows * d) {
            throw ShapeError("masked softmax: mask of " + std::to_string(allowed->size()) +
                             " entries does not cover the last two dims of " +
                             shape_str(x.shape()));
        }
    }
    const int64_t rows = x.numel() / d;
    std::vector<Real> out(x.data().size());
    for (int64_t r = 0; r < rows; ++r) {
        const Real* xr = x.data().data() + r * d;
        Real* yr = out.data() + r * d;
        const uint8_t* mr =
            allowed ? allowed->data() + (r % mask_rows) * d : nullptr;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int64_t j = 0; j < d; ++j) {
            if (!mr || mr[j]) mx = std::max(mx, xr[j]);
        }
        if (mx == -std::numeric_limits<Real>::infinity()) {
            throw ShapeError("masked softmax: a row admits no entries");
        }
        Real z = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            if (!mr || mr[j]) {
                yr[j] = std::exp(xr[j] - mx);
                z += yr[j];
            } else {
                yr[j] = 0.0;
            }
        }
        for (int64_t j = 0; j < d; ++j) yr[j] /= z;
    }
    detail::Node* px = x.node().get();
    std::vector<Real> probs = out;
    return make_op(x.shape(), std::move(out), {x},
                   [px, rows, d, probs = std::move(probs)](const std::vector<Real>& g,
                                                           const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (int64_t r = 0; r < rows; ++r) {
                           const Real* pr = probs.data() + r * d;
                           const Real* gr = g.data() + r * d;
                           Real dot = 0.0;
                           for (int64_t j = 0; j < d; ++j) dot += gr[j] * pr[j];
                           for (int64_t j = 0; j < d; ++j)
                               gx[static_cast<size_t>(r * d + j)] += pr[j] * (gr[j] - dot);
                       }
                   });
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) { return softmax_impl(x, nullptr); }

Tensor masked_softmax_lastdim(const Tensor& x, const std::vector<uint8_t>& allowed) {
    return softmax_impl(x, &allowed);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask) {
    if (logits.rank() != 2) throw ShapeError("cross entropy: logits must be rank 2");
    const int64_t t = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != t || static_cast<int64_t>(mask.size()) != t) {
        throw ShapeError("cross entropy: got " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(mask.size()) + " mask entries for " +
                         std::to_string(t) + " positions");
    }
    int64_t used = 0;
    for (int64_t i = 0; i < t; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        ++used;
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= vocab) {
            throw DataError("cross entropy: target " + std::to_string(targets[i]) +
                            " at position " + std::to_string(i) + " outside vocab of " +
                            std::to_string(vocab));
        }
    }
    if (used == 0) throw Error("cross entropy: every position is masked out");

    std::vector<Real> probs(logits.data().size());
    Real loss = 0.0;
    for (int64_t i = 0; i < t; ++i) {
        const Real* xr = logits.data().data() + i * vocab;
        Real* pr = probs.data() + i * vocab;
        Real mx = xr[0];
        for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, xr[j]);
        Real z = 0.0;
        for (int64_t j = 0; j < vocab; ++j) {
            pr[j] = std::exp(xr[j] - mx);
            z += pr[j];
        }
        for (int64_t j = 0; j < vocab; ++j) pr[j] /= z;
        if (mask[static_cast<size_t>(i)]) {
            loss -= std::log(pr[targets[static_cast<size_t>(i)]]);
        }
    }
    loss /= static_cast<Real>(used);

    detail::Node* pl = logits.node().get();
    std::vector<int> tg = targets;
    std::vector<uint8_t> mk = mask;
    return make_op({1}, {loss}, {logits},
                   [pl, t, vocab, used, tg = std::move(tg), mk = std::move(mk),
                    probs = std::move(probs)](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(pl);
                       const Real gs = g[0] / static_cast<Real>(used);
                       for (int64_t i = 0; i < t; ++i) {
                           if (!mk[static_cast<size_t>(i)]) continue;
                           const Real* pr = probs.data() + i * vocab;
                           Real* gr = gx.data() + i * vocab;
                           for (int64_t j = 0; j < vocab; ++j) gr[j] += gs * pr[j];
                           gr[tg[static_cast<size_t>(i)]] -= gs;
                       }
                   });
}

Tensor sum(const Tensor& x) {
    Real acc = 0.0;
    for (Real v : x.data()) acc += v;
    detail::Node* px = x.node().get();
    return make_op({1}, {acc}, {x},
                   [px](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                   });
}

Tensor mean(const Tensor& x) {
    Real acc = 0.0;
    for (Real v : x.data()) acc += v;
    const Real inv = 1.0 / static_cast<Real>(x.numel());
    detail::Node* px = x.node().get();
    return make_op({1}, {acc * inv}, {x},
                   [px, inv](const std::vector<Real>& g, const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * inv;
                   });
}

Tensor bilinear_resize_grid(const Tensor& x, int r0, int c0, int r1, int c1) {
    if (x.rank() != 2 || x.dim(0) != static_cast<int64_t>(r0) * c0) {
        throw ShapeError("resize grid: " + shape_str(x.shape()) + " is not a " +
                         std::to_string(r0) + "x" + std::to_string(c0) + " grid");
    }
    if (r0 == r1 && c0 == c1) return x;
    const int64_t d = x.dim(1);

    struct Tap {
        int64_t src;
        Real w;
    };
    std::vector<std::array<Tap, 4>> taps(static_cast<size_t>(r1) * c1);
    for (int ri = 0; ri < r1; ++ri) {
        const Real sr = (r1 == 1) ? 0.0
                                  : static_cast<Real>(ri) * (r0 - 1) / static_cast<Real>(r1 - 1);
        const int rlo = static_cast<int>(sr);
        const int rhi = std::min(rlo + 1, r0 - 1);
        const Real fr = sr - rlo;
        for (int ci = 0; ci < c1; ++ci) {
            const Real sc = (c1 == 1)
                                ? 0.0
                                : static_cast<Real>(ci) * (c0 - 1) / static_cast<Real>(c1 - 1);
            const int clo = static_cast<int>(sc);
            const int chi = std::min(clo + 1, c0 - 1);
            const Real fc = sc - clo;
            taps[static_cast<size_t>(ri) * c1 + ci] = {{
                {static_cast<int64_t>(rlo) * c0 + clo, (1 - fr) * (1 - fc)},
                {static_cast<int64_t>(rlo) * c0 + chi, (1 - fr) * fc},
                {static_cast<int64_t>(rhi) * c0 + clo, fr * (1 - fc)},
                {static_cast<int64_t>(rhi) * c0 + chi, fr * fc},
            }};
        }
    }

    std::vector<Real> out(static_cast<size_t>(r1) * c1 * d, 0.0);
    for (size_t cell = 0; cell < taps.size(); ++cell) {
        Real* dst = out.data() + cell * static_cast<size_t>(d);
        for (const Tap& tp : taps[cell]) {
            if (tp.w == 0.0) continue;
            const Real* src = x.data().data() + tp.src * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += tp.w * src[j];
        }
    }
    detail::Node* px = x.node().get();
    return make_op({static_cast<int64_t>(r1) * c1, d}, std::move(out), {x},
                   [px, d, taps = std::move(taps)](const std::vector<Real>& g,
                                                   const auto& grad_of) {
                       auto& gx = grad_of(px);
                       for (size_t cell = 0; cell < taps.size(); ++cell) {
                           const Real* src = g.data() + cell * static_cast<size_t>(d);
                           for (const Tap& tp : taps[cell]) {
                               if (tp.w == 0.0) continue;
                               Real* dst = gx.data() + tp.src * d;
                               for (int64_t j = 0; j < d; ++j) dst[j] += tp.w * src[j];
                           }
                       }
                   });
}

}  // namespace mmpt
