#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/rng.hpp"

namespace mmrec {

// Dense row-major tensor of doubles. Training math is 64-bit throughout;
// 32-bit storage only appears in serialized files.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor vec(std::vector<double> values);  // rank-1

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }

    // Rank-2 accessors; throw on rank mismatch.
    int64_t rows() const;
    int64_t cols() const;
    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

// ---- dense kernels ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // (n,k) x (k,m)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (n,k) x (m,k) -> (n,m)
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // (k,n) x (k,m) -> (n,m)

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor emax(const Tensor& a, const Tensor& b); // elementwise max
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& a, const Tensor& row);  // broadcast row over rank-2 a
Tensor transpose(const Tensor& a);
Tensor concat_rows(const std::vector<const Tensor*>& parts);  // axis 0

void add_inplace(Tensor& dst, const Tensor& src);

// Numerically stable softmax of a rank-1 tensor: subtracts the max logit
// before exponentiation; output sums to 1.
Tensor softmax_stable(const Tensor& logits);
void softmax_rows_inplace(Tensor& m);

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine (gain, bias). Accepts rank-1 or rank-2 input.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Keep/scale multipliers for inverted dropout; one uniform draw per element,
// in element order. rate == 0 draws nothing.
std::vector<double> dropout_mask(int64_t n, double rate, Rng& rng);
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train);

Tensor gelu(const Tensor& x);  // exact erf form
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

Tensor l2_normalize_rows(const Tensor& x);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);

// Cosine similarity divided by the temperature. Throws on zero-norm input.
double similarity(const Tensor& a, const Tensor& b, double tau);

}  // namespace mmrec
