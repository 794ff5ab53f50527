#include "vapl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "vapl/errors.hpp"

namespace vapl {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                         " values");
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || end > shape_[0] || begin > end) throw ShapeError("slice_rows out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(const std::string& what) const {
    if (!all_finite()) throw NumericError("non-finite value in " + what);
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max() const {
    if (data_.empty()) throw ShapeError("max() of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (o.shape_ != shape_) throw ShapeError("+= shape mismatch " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    Shape s = items[0].shape();
    std::vector<double> data;
    data.reserve(items.size() * items[0].size());
    for (const Tensor& t : items) {
        if (t.shape() != s) throw ShapeError("stack: shape " + shape_str(t.shape()) + " vs " + shape_str(s));
        data.insert(data.end(), t.vec().begin(), t.vec().end());
    }
    s.insert(s.begin(), items.size());
    return Tensor(std::move(s), std::move(data));
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
    if (t.shape() != expected)
        throw ShapeError(what + ": expected shape " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

}  // namespace vapl
