#pragma once

#include "maf/errors.hpp"
#include "maf/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace maf {

// Dense row-major f64 matrix. Vectors are 1 x n or n x 1; scalars 1 x 1.
// Immutable by convention once handed to a Tape.
class Tensor {
  public:
    Tensor() : rows_(0), cols_(0) {}
    Tensor(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    static Tensor row(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(1, n, std::move(v));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& vec() const { return data_; }

    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor");
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor transposed() const {
        Tensor out(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) out.data_[j * rows_ + i] = data_[i * cols_ + j];
        return out;
    }

  private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

// Plain (tape-free) arithmetic, routed through the kernel table.

inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Tensor c(a.rows(), b.cols());
    kernels::active().matmul_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    return c;
}

inline Tensor add_plain(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimensionError("add shape mismatch");
    Tensor out(a.rows(), a.cols());
    kernels::active().add(a.data(), b.data(), out.data(), a.size());
    return out;
}

inline Tensor relu_plain(const Tensor& a) {
    Tensor out(a.rows(), a.cols());
    kernels::active().relu(a.data(), out.data(), a.size());
    return out;
}

// Broadcast-add a 1 x n row vector to each row.
inline Tensor add_rowvec_plain(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw DimensionError("row vector shape mismatch in broadcast add");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        kernels::active().add(a.data() + i * a.cols(), row.data(), out.data() + i * a.cols(),
                              a.cols());
    return out;
}

} // namespace maf
