#include "mmpt/optim.hpp"

#include <cmath>

namespace mmpt {

void AdamW::step(ParamStore& params, Real lr) {
    ++step_count_;
    const Real t = static_cast<Real>(step_count_);
    const Real bias1 = 1.0 - std::pow(cfg_.beta1, t);
    const Real bias2 = 1.0 - std::pow(cfg_.beta2, t);
    for (auto& up : params.all()) {
        Parameter& p = *up;
        if (p.frozen) continue;
        if (!p.value.has_grad()) {
            throw Error("adamw: no gradient for trainable parameter '" + p.name + "'");
        }
        const std::vector<Real>& g = p.value.grad();
        Slot& slot = slots_[p.name];
        if (slot.m.empty()) {
            slot.m.assign(g.size(), 0.0);
            slot.v.assign(g.size(), 0.0);
        }
        std::vector<Real>& w = p.value.mutable_data();
        for (size_t i = 0; i < g.size(); ++i) {
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const Real mhat = slot.m[i] / bias1;
            const Real vhat = slot.v[i] / bias2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
        }
    }
}

void AdamW::set_state(uint64_t step_count, std::unordered_map<std::string, Slot> slots) {
    step_count_ = step_count;
    slots_ = std::move(slots);
}

void AdamW::reset_slot(const std::string& name) { slots_.erase(name); }

Real clip_global_norm(ParamStore& params, Real max_norm) {
    Real sq = 0.0;
    for (auto& up : params.all()) {
        if (up->frozen || !up->value.has_grad()) continue;
        for (Real g : up->value.grad()) sq += g * g;
    }
    const Real norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const Real s = max_norm / norm;
        for (auto& up : params.all()) {
            if (up->frozen || !up->value.has_grad()) continue;
            auto& g = up->value.node()->grad;
            for (Real& v : g) v *= s;
        }
    }
    return norm;
}

}  // namespace mmpt
