#include "phenoswin/params.hpp"

#include <stdexcept>

namespace phenoswin {

ag::Var& ParamStore::add(const std::string& name, Tensor init) {
    auto [it, inserted] = params_.emplace(name, ag::Var::parameter(std::move(init)));
    if (!inserted) throw std::invalid_argument("duplicate parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor init) {
    auto [it, inserted] = buffers_.emplace(name, std::move(init));
    if (!inserted) throw std::invalid_argument("duplicate buffer '" + name + "'");
    return it->second;
}

const ag::Var& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

ag::Var& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw std::out_of_range("unknown buffer '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw std::out_of_range("unknown buffer '" + name + "'");
    return it->second;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& [name, v] : params_) out.add(name, v.value());
    out.buffers_ = buffers_;
    return out;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
}

Index ParamStore::parameter_count() const {
    Index n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * rng.normal();
    return t;
}

}  // namespace phenoswin
