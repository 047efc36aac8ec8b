#include <doctest.h>

#include <cmath>

#include "appt/oracles.hpp"
#include "appt/rng.hpp"
#include "appt/tensor.hpp"

using namespace appt;

namespace {

Tensor random_matrix(Rng& rng, int m, int n) {
    Tensor t({m, n});
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("shape and data length must agree") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ContractError);
    CHECK_THROWS_AS(Tensor({0, 3}), ContractError);
    CHECK_THROWS_AS(Tensor({2, -1}), ContractError);
    Tensor ok({2, 2}, {1, 2, 3, 4});
    CHECK(ok.size() == 4);
}

TEST_CASE("tensors share storage on copy and deep-copy on clone") {
    Tensor a({1, 2}, {1.0, 2.0});
    Tensor b = a;
    CHECK(a.storage_id() == b.storage_id());
    Tensor c = a.clone();
    CHECK(a.storage_id() != c.storage_id());
    c.data()[0] = 9.0;
    CHECK(a.data()[0] == 1.0);
}

TEST_CASE("reshape shares storage and checks element count") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = a.reshape({3, 2});
    CHECK(b.storage_id() == a.storage_id());
    CHECK(b.at(2, 1) == 6.0);
    CHECK_THROWS_AS(a.reshape({4, 2}), ContractError);
}

TEST_CASE("matmul identity leaves the operand unchanged") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {2, 3, 4, 5});
    Tensor c = matmul_nn(eye, b);
    CHECK(c.max_abs_diff(b) == 0.0);
}

TEST_CASE("matmul 1x2 by 2x1 is a dot product") {
    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    Tensor c = matmul_nn(a, b);
    CHECK(c.size() == 1);
    CHECK(c.data()[0] == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul matches the triple-loop oracle on a random 4x5 by 5x3") {
    Rng rng(17);
    Tensor a = random_matrix(rng, 4, 5);
    Tensor b = random_matrix(rng, 5, 3);
    CHECK(matmul_nn(a, b).max_abs_diff(matmul_ref(a, b)) <= 1e-12);
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul_nn(a, b);
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("transposed kernels agree with explicit transposition") {
    Rng rng(3);
    Tensor a = random_matrix(rng, 4, 6);
    Tensor b = random_matrix(rng, 5, 6); // nt: a * b^T -> 4x5
    Tensor bt({6, 5});
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 6; ++j) bt.at(j, i) = b.at(i, j);
    }
    Tensor nt;
    gemm_nt(nt, a, b, false);
    CHECK(nt.max_abs_diff(matmul_ref(a, bt)) <= 1e-12);

    Tensor c = random_matrix(rng, 6, 3);
    Tensor at({6, 4});
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) at.at(j, i) = a.at(i, j);
    }
    Tensor tn;
    gemm_tn(tn, at, c, false); // at^T * c == a * c
    CHECK(tn.max_abs_diff(matmul_ref(a, c)) <= 1e-12);
}

TEST_CASE("gemm accumulate adds into the target") {
    Tensor a({1, 1}, {2.0});
    Tensor b({1, 1}, {3.0});
    Tensor c({1, 1}, {10.0});
    gemm_nn(c, a, b, true);
    CHECK(c.data()[0] == doctest::Approx(16.0));
}

TEST_CASE("finiteness validation catches NaN and Inf") {
    Tensor t({1, 2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t.data()[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.check_finite("test"), NumericError);
}

TEST_CASE("rng streams are reproducible and distinct per tag") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng::derive(1, "alpha") != Rng::derive(1, "beta"));
    CHECK(Rng::derive(1, "alpha", 0) != Rng::derive(1, "alpha", 1));
}

TEST_CASE("truncated normal stays within the clip") {
    Rng rng(7);
    for (int i = 0; i < 2000; ++i) {
        CHECK(std::fabs(rng.truncated_normal(0.0, 0.02, 2.0)) <= 0.04 + 1e-12);
    }
}
