#include "phenoswin/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace phenoswin {

Index shape_numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<Index>(data_.size()) != shape_numel(shape_))
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Index Tensor::offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size()) throw std::out_of_range("index rank does not match tensor rank");
    Index off = 0;
    std::size_t a = 0;
    for (Index i : idx) {
        if (i < 0 || i >= shape_[a]) throw std::out_of_range("tensor index out of range");
        off = off * shape_[a] + i;
        ++a;
    }
    return off;
}

}  // namespace phenoswin
