#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmpt/errors.hpp"

namespace mmpt {

// All math runs in double precision so gradient checks and replayed runs are
// exact to the last bit.
using Real = double;
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Disables gradient recording for the current thread while alive.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> data;
    // Accumulated gradient for leaves; empty until backward reaches the node.
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's gradient for the current pass and adds contributions
    // to the parents' pass gradients. Empty for leaves.
    std::function<void(const std::vector<Real>& self_grad,
                       const std::function<std::vector<Real>&(Node*)>& grad_of)>
        backprop;
};

}  // namespace detail

class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor scalar(Real value);

    bool defined() const { return node_ != nullptr; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
    const Shape& shape() const { return node_->shape; }

    const std::vector<Real>& data() const { return node_->data; }
    std::vector<Real>& mutable_data() { return node_->data; }
    Real item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const std::vector<Real>& grad() const;
    // Allocates (or re-zeroes) the gradient buffer.
    void zero_grad();
    void drop_grad();

    // Accumulates into leaf gradients. Only defined for scalar results.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  private:
    friend Tensor make_op(Shape shape, std::vector<Real> data,
                          std::vector<Tensor> inputs,
                          std::function<void(const std::vector<Real>&,
                                             const std::function<std::vector<Real>&(detail::Node*)>&)>
                              backprop);
    std::shared_ptr<detail::Node> node_;
};

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real c);
// Multiplies every element of x by a single-element tensor (e.g. a gate).
Tensor scale_by(const Tensor& x, const Tensor& s);

// x: [..., d], bias: [d].
Tensor add_bias(const Tensor& x, const Tensor& bias);

// a: [m, k], b: [k, n] -> [m, n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [h, m, k], b: [h, k, n] -> [h, m, n].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x);              // [m, n] -> [n, m]
Tensor transpose_last2(const Tensor& x);        // [h, m, n] -> [h, n, m]
Tensor reshape(const Tensor& x, Shape shape);
// [t, h*d] -> [h, t, d].
Tensor split_heads(const Tensor& x, int heads);
// [h, t, d] -> [t, h*d].
Tensor merge_heads(const Tensor& x);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end);

// table: [vocab, d]; one output row per id.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Normalizes the last dimension; gain and bias are [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps = 1e-5);

Tensor silu(const Tensor& x);
Tensor tanh_t(const Tensor& x);

// Softmax over the last dimension.
Tensor softmax_lastdim(const Tensor& x);
// Same, but entries with allowed == 0 get probability exactly zero. The mask
// covers the last two dimensions and is shared across any leading dimension.
Tensor masked_softmax_lastdim(const Tensor& x, const std::vector<uint8_t>& allowed);

// logits: [t, vocab]; mask selects which positions contribute. Returns the
// mean negative log-likelihood over unmasked positions.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Treats x as an [r0 x c0] grid of d-dim cells and resizes the grid to
// [r1 x c1] with align-corners bilinear interpolation.
Tensor bilinear_resize_grid(const Tensor& x, int r0, int c0, int r1, int c1);

}  // namespace mmpt
