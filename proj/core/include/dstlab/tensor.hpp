#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace dstlab::numeric {

// Dense row-major tensor of 64-bit reals. Everything the tracker needs is
// rank 1 or 2; scalars are rank-1 tensors of length 1.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor row(std::vector<double> v);
    static Tensor matrix(int rows, int cols, std::vector<double> v);

    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return rank() == 2 ? shape[0] : 1; }
    int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }
    std::int64_t numel() const;
    bool is_scalar() const { return numel() == 1; }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;

    void fill(double v);
    bool all_finite() const;
};

}  // namespace dstlab::numeric
