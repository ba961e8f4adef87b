#include "dstlab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dstlab/errors.hpp"

namespace dstlab::numeric {

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel() != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str());
    }
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<std::size_t>(t.numel()), 0.0);
    return t;
}

Tensor Tensor::row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

std::int64_t Tensor::numel() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string Tensor::shape_str() const {
    std::ostringstream ss;
    ss << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
    ss << "]";
    return ss.str();
}

void Tensor::fill(double v) {
    for (double& x : data) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace dstlab::numeric
