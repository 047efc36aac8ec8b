#include "appt/tensor.hpp"

#include <cmath>
#include <cstring>

namespace appt {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

int64_t Tensor::checked_size(const Shape& shape) {
    if (shape.empty()) throw ContractError("tensor shape must have at least one dimension");
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ContractError("tensor dimensions must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    size_ = checked_size(shape_);
    data_ = std::make_shared<std::vector<double>>(static_cast<size_t>(size_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    size_ = checked_size(shape_);
    if (size_ != static_cast<int64_t>(values.size())) {
        throw ContractError("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
}

Tensor Tensor::row(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

int Tensor::rows() const {
    if (ndim() != 2) throw ContractError("expected 2-D tensor, got " + shape_str(shape_));
    return shape_[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw ContractError("expected 2-D tensor, got " + shape_str(shape_));
    return shape_[1];
}

Tensor Tensor::clone() const {
    if (!defined()) return Tensor();
    Tensor t;
    t.shape_ = shape_;
    t.size_ = size_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    t.requires_grad_ = requires_grad_;
    return t;
}

Tensor Tensor::reshape(Shape shape) const {
    int64_t n = checked_size(shape);
    if (n != size_) {
        throw ContractError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape) +
                            ": element counts differ");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = n;
    t.data_ = data_;
    t.requires_grad_ = requires_grad_;
    return t;
}

bool Tensor::all_finite() const {
    const double* p = data();
    for (int64_t i = 0; i < size_; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

void Tensor::check_finite(const char* context) const {
    if (!all_finite()) {
        throw NumericError(std::string(context) + " produced a non-finite value");
    }
}

double Tensor::max_abs_diff(const Tensor& other) const {
    if (!same_shape(other)) {
        throw ContractError("max_abs_diff shapes differ: " + shape_str(shape_) + " vs " +
                            shape_str(other.shape_));
    }
    double m = 0.0;
    const double* a = data();
    const double* b = other.data();
    for (int64_t i = 0; i < size_; ++i) {
        double d = std::fabs(a[i] - b[i]);
        if (d > m) m = d;
    }
    return m;
}

namespace {

void check_gemm(const Tensor& a, const Tensor& b, int am, int ak, int bk, int bn,
                const char* which) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ContractError(std::string(which) + ": operands must be 2-D, got " +
                            shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    (void)am;
    (void)bn;
    if (ak != bk) {
        throw ContractError(std::string(which) + ": inner dimensions do not match, " +
                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void prepare_out(Tensor& c, int m, int n, bool accumulate) {
    if (!accumulate || !c.defined()) {
        c = Tensor({m, n});
    } else if (c.rows() != m || c.cols() != n) {
        throw ContractError("gemm accumulate target has shape " + shape_str(c.shape()) +
                            ", expected [" + std::to_string(m) + "x" + std::to_string(n) + "]");
    }
}

} // namespace

void gemm_nn(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate) {
    check_gemm(a, b, a.rows(), a.cols(), b.rows(), b.cols(), "matmul");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    prepare_out(c, m, n, accumulate);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    // i-k-j order: the inner loop streams rows of B and C, which vectorizes.
    for (int i = 0; i < m; ++i) {
        double* crow = pc + static_cast<int64_t>(i) * n;
        const double* arow = pa + static_cast<int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = pb + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void gemm_nt(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate) {
    check_gemm(a, b, a.rows(), a.cols(), b.cols(), b.rows(), "matmul_nt");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    prepare_out(c, m, n, accumulate);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<int64_t>(i) * k;
        double* crow = pc + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = pb + static_cast<int64_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

void gemm_tn(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate) {
    check_gemm(a, b, a.cols(), a.rows(), b.rows(), b.cols(), "matmul_tn");
    const int k = a.rows(), m = a.cols(), n = b.cols();
    prepare_out(c, m, n, accumulate);
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (int kk = 0; kk < k; ++kk) {
        const double* arow = pa + static_cast<int64_t>(kk) * m;
        const double* brow = pb + static_cast<int64_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double aki = arow[i];
            double* crow = pc + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
    Tensor c;
    gemm_nn(c, a, b, false);
    return c;
}

} // namespace appt
