#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "appt/errors.hpp"

namespace appt {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats. Storage is shared on copy; tensors
// are treated as immutable after creation except for explicit in-place
// optimizer updates (see AdamW). A 32-bit representation exists only at the
// checkpoint I/O boundary.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor row(std::vector<double> values); // 1 x n
    static Tensor scalar(double value);            // 1 x 1

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return size_; }

    // 2-D accessors; throw on other ranks.
    int rows() const;
    int cols() const;
    double at(int r, int c) const { return data()[static_cast<int64_t>(r) * cols() + c]; }
    double& at(int r, int c) { return data()[static_cast<int64_t>(r) * cols() + c]; }

    const double* data() const { return data_->data(); }
    double* data() { return data_->data(); }

    // Identity of the underlying storage; equal ids mean shared parameters.
    const void* storage_id() const { return static_cast<const void*>(data_.get()); }

    Tensor clone() const;

    // Same storage, new shape with identical element count.
    Tensor reshape(Shape shape) const;

    bool all_finite() const;
    void check_finite(const char* context) const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    double max_abs_diff(const Tensor& other) const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    int64_t size_ = 0;
    std::shared_ptr<std::vector<double>> data_;
    bool requires_grad_ = false;

    static int64_t checked_size(const Shape& shape);
};

// Raw matrix kernels. C is (re)used in place when `accumulate` is set; all
// loops run in one fixed order so results are run-to-run deterministic.
// gemm_nn: C (+)= A * B          A[m,k] B[k,n]
// gemm_nt: C (+)= A * B^T        A[m,k] B[n,k]
// gemm_tn: C (+)= A^T * B        A[k,m] B[k,n]
void gemm_nn(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate);
void gemm_nt(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate);
void gemm_tn(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate);

Tensor matmul_nn(const Tensor& a, const Tensor& b);

} // namespace appt
