#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "semcodec/errors.hpp"

namespace semcodec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

// Dense row-major array of doubles. The first dimension is the batch for
// everything that flows through a Network.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v))
    {
        if (values.size() != shape_size(shape)) {
            throw ShapeError("tensor value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_string(shape));
        }
    }

    std::size_t size() const { return values.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t batch() const { return shape.empty() ? 0 : shape.front(); }
    // Elements per batch row.
    std::size_t row_size() const { return shape.empty() ? 0 : values.size() / shape.front(); }

    double* data() { return values.data(); }
    const double* data() const { return values.data(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool all_finite() const;
    void fill(double v) { std::fill(values.begin(), values.end(), v); }
    Tensor reshaped(Shape s) const;
};

} // namespace semcodec
