#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace phenoswin {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. All model math runs in 64-bit.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    Index dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    Index numel() const { return static_cast<Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    template <typename... I>
    double& at(I... idx) {
        return data_[static_cast<std::size_t>(offset({static_cast<Index>(idx)...}))];
    }
    template <typename... I>
    double at(I... idx) const {
        return data_[static_cast<std::size_t>(offset({static_cast<Index>(idx)...}))];
    }

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Index offset(std::initializer_list<Index> idx) const;

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace phenoswin
