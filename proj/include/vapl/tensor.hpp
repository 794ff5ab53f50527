#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vapl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Every value in the library is 64-bit.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor like(const Tensor& other, double fill = 0.0) { return Tensor(other.shape_, fill); }

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const;

    // Same data, new shape; element count must match.
    Tensor reshaped(Shape shape) const;

    // Rows [begin, end) along the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;

    bool all_finite() const;
    // Throws NumericError naming `what` if any value is NaN or Inf.
    void check_finite(const std::string& what) const;

    double sum() const;
    double max() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator*=(double s);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Stacks equally-shaped tensors along a new leading dimension.
Tensor stack(std::span<const Tensor> items);

void require_shape(const Tensor& t, const Shape& expected, const std::string& what);

}  // namespace vapl
