#pragma once

#include <functional>
#include <map>
#include <string>

#include "phenoswin/params.hpp"

namespace phenoswin {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double grad_clip = 1.0;  // global-norm clip, 0 disables
};

/// Adaptive moments with decoupled weight decay. Decay applies to matrices only
/// (biases and normalization scales are exempt).
class AdamW {
public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    /// One update over every parameter accepted by `trainable` (all when empty).
    /// Returns the pre-clip global gradient norm.
    double step(ParamStore& store, double lr, const std::function<bool(const std::string&)>& trainable = {});

    std::int64_t steps() const { return steps_; }

private:
    AdamWOptions options_;
    std::map<std::string, Tensor> first_, second_;
    std::int64_t steps_ = 0;
};

}  // namespace phenoswin
