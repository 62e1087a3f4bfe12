#include "mmpt/param.hpp"

namespace mmpt {

Parameter& ParamStore::add(const std::string& name, Tensor value, bool frozen) {
    if (index_.count(name)) {
        throw ConfigError("parameter '" + name + "' registered twice");
    }
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(value);
    p->frozen = frozen;
    p->value.node()->requires_grad = !frozen;
    Parameter& ref = *p;
    index_[name] = p.get();
    items_.push_back(std::move(p));
    return ref;
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
}

Parameter& ParamStore::at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw ConfigError("unknown parameter '" + name + "'");
    return *p;
}

std::vector<Parameter*> ParamStore::trainable() {
    std::vector<Parameter*> out;
    for (auto& p : items_) {
        if (!p->frozen) out.push_back(p.get());
    }
    return out;
}

void ParamStore::zero_grads() {
    for (auto& p : items_) {
        if (!p->frozen) p->value.zero_grad();
    }
}

Tensor init_tensor(Shape shape, Init kind) {
    if (kind == Init::kNormal) {
        throw ConfigError("init_tensor: random init requires an rng");
    }
    Rng unused(0);
    return init_tensor(std::move(shape), kind, unused);
}

Tensor init_tensor(Shape shape, Init kind, Rng& rng, Real stddev) {
    const size_t n = static_cast<size_t>(shape_numel(shape));
    std::vector<Real> v(n, 0.0);
    switch (kind) {
        case Init::kNormal:
            for (size_t i = 0; i < n; ++i) v[i] = rng.normal(0.0, stddev);
            break;
        case Init::kZero:
            break;
        case Init::kOnes:
            for (size_t i = 0; i < n; ++i) v[i] = 1.0;
            break;
    }
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace mmpt
