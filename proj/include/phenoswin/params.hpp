#pragma once

#include <map>
#include <string>

#include "phenoswin/autograd.hpp"
#include "phenoswin/rng.hpp"

namespace phenoswin {

/// Named trainable parameters plus non-trainable buffers (normalization statistics).
class ParamStore {
public:
    ag::Var& add(const std::string& name, Tensor init);
    Tensor& add_buffer(const std::string& name, Tensor init);

    bool contains(const std::string& name) const { return params_.contains(name); }
    const ag::Var& get(const std::string& name) const;
    ag::Var& get(const std::string& name);
    Tensor& buffer(const std::string& name);
    const Tensor& buffer(const std::string& name) const;
    bool has_buffer(const std::string& name) const { return buffers_.contains(name); }

    std::map<std::string, ag::Var>& params() { return params_; }
    const std::map<std::string, ag::Var>& params() const { return params_; }
    std::map<std::string, Tensor>& buffers() { return buffers_; }
    const std::map<std::string, Tensor>& buffers() const { return buffers_; }

    /// Deep copy with fresh leaf nodes (no shared gradient state).
    ParamStore clone() const;
    void zero_grad();
    Index parameter_count() const;

private:
    std::map<std::string, ag::Var> params_;
    std::map<std::string, Tensor> buffers_;
};

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

}  // namespace phenoswin
