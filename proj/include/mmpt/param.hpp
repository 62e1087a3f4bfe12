#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmpt/rng.hpp"
#include "mmpt/tensor.hpp"

namespace mmpt {

struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;
};

// Owns every parameter of a model in registration order. Frozen parameters
// never require gradients and are skipped by the optimizer.
class ParamStore {
  public:
    Parameter& add(const std::string& name, Tensor value, bool frozen = false);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    const std::vector<std::unique_ptr<Parameter>>& all() const { return items_; }
    std::vector<Parameter*> trainable();

    // Allocates (or re-zeroes) gradient buffers for every trainable parameter.
    void zero_grads();

    size_t size() const { return items_.size(); }

  private:
    std::vector<std::unique_ptr<Parameter>> items_;
    std::unordered_map<std::string, Parameter*> index_;
};

enum class Init { kNormal, kZero, kOnes };

Tensor init_tensor(Shape shape, Init kind, Rng& rng, Real stddev = 0.02);
// For the deterministic kinds only.
Tensor init_tensor(Shape shape, Init kind);

}  // namespace mmpt
