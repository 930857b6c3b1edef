#include "phenoswin/optim.hpp"

#include <cmath>

namespace phenoswin {

double AdamW::step(ParamStore& store, double lr, const std::function<bool(const std::string&)>& trainable) {
    auto selected = [&](const std::string& name) { return !trainable || trainable(name); };

    double sq = 0.0;
    for (auto& [name, p] : store.params()) {
        if (!selected(name)) continue;
        for (double g : p.grad().data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (options_.grad_clip > 0.0 && norm > options_.grad_clip) ? options_.grad_clip / norm : 1.0;

    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (auto& [name, p] : store.params()) {
        if (!selected(name)) continue;
        Tensor& value = p.mutable_value();
        auto [mit, m_new] = first_.try_emplace(name, Tensor(value.shape()));
        auto [vit, v_new] = second_.try_emplace(name, Tensor(value.shape()));
        auto m = mit->second.data();
        auto v = vit->second.data();
        const auto g = p.grad().data();
        auto w = value.data();
        const bool decay = value.rank() >= 2;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
            v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
            if (decay) w[i] -= lr * options_.weight_decay * w[i];
            w[i] -= lr * update;
        }
    }
    return norm;
}

}  // namespace phenoswin
