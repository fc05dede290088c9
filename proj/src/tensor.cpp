#include "mmrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmrec {

namespace {

[[noreturn]] void dim_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw Error(ErrorKind::dimension,
                op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) dim_error(op, a, b);
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(t.numel()), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::vec(std::vector<double> values) {
    Tensor t;
    t.shape = {static_cast<int64_t>(values.size())};
    t.data = std::move(values);
    return t;
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int64_t s : shape) n *= s;
    return shape.empty() ? 0 : n;
}

int64_t Tensor::rows() const {
    if (rank() != 2) throw Error(ErrorKind::dimension, "rows(): tensor is not rank-2: " + shape_str());
    return shape[0];
}

int64_t Tensor::cols() const {
    if (rank() != 2) throw Error(ErrorKind::dimension, "cols(): tensor is not rank-2: " + shape_str());
    return shape[1];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) dim_error("matmul", a, b);
    const int64_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
    Tensor c = Tensor::zeros({n, m});
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i * k)];
        double* crow = &c.data[static_cast<size_t>(i * m)];
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(kk * m)];
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1]) dim_error("matmul_nt", a, b);
    const int64_t n = a.shape[0], k = a.shape[1], m = b.shape[0];
    Tensor c = Tensor::zeros({n, m});
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i * k)];
        double* crow = &c.data[static_cast<size_t>(i * m)];
        for (int64_t j = 0; j < m; ++j) {
            const double* brow = &b.data[static_cast<size_t>(j * k)];
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0]) dim_error("matmul_tn", a, b);
    const int64_t k = a.shape[0], n = a.shape[1], m = b.shape[1];
    Tensor c = Tensor::zeros({n, m});
    for (int64_t kk = 0; kk < k; ++kk) {
        const double* arow = &a.data[static_cast<size_t>(kk * n)];
        const double* brow = &b.data[static_cast<size_t>(kk * m)];
        for (int64_t i = 0; i < n; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = &c.data[static_cast<size_t>(i * m)];
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Tensor emax(const Tensor& a, const Tensor& b) {
    require_same_shape("emax", a, b);
    Tensor c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] = std::max(a.data[i], b.data[i]);
    return c;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data) v *= c;
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (a.rank() != 2 || row.rank() != 1 || a.shape[1] != row.shape[0]) dim_error("add_rowvec", a, row);
    Tensor c = a;
    const int64_t n = a.shape[0], m = a.shape[1];
    for (int64_t i = 0; i < n; ++i) {
        double* crow = &c.data[static_cast<size_t>(i * m)];
        for (int64_t j = 0; j < m; ++j) crow[j] += row.data[static_cast<size_t>(j)];
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw Error(ErrorKind::dimension, "transpose: tensor is not rank-2: " + a.shape_str());
    const int64_t n = a.shape[0], m = a.shape[1];
    Tensor c = Tensor::zeros({m, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) c.at(j, i) = a.at(i, j);
    return c;
}

Tensor concat_rows(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw Error(ErrorKind::input, "concat_rows: no inputs");
    const int64_t m = parts[0]->cols();
    int64_t n = 0;
    for (const Tensor* p : parts) {
        if (p->cols() != m) dim_error("concat_rows", *parts[0], *p);
        n += p->rows();
    }
    Tensor c = Tensor::zeros({n, m});
    size_t off = 0;
    for (const Tensor* p : parts) {
        std::copy(p->data.begin(), p->data.end(), c.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += p->data.size();
    }
    return c;
}

void add_inplace(Tensor& dst, const Tensor& src) {
    require_same_shape("add_inplace", dst, src);
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

Tensor softmax_stable(const Tensor& logits) {
    if (logits.rank() != 1 || logits.shape[0] == 0)
        throw Error(ErrorKind::dimension, "softmax_stable: need a non-empty rank-1 tensor");
    Tensor out = logits;
    const double mx = *std::max_element(out.data.begin(), out.data.end());
    double sum = 0.0;
    for (double& v : out.data) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : out.data) v /= sum;
    return out;
}

void softmax_rows_inplace(Tensor& m) {
    const int64_t n = m.rows(), c = m.cols();
    if (c == 0) throw Error(ErrorKind::dimension, "softmax_rows: empty rows");
    for (int64_t i = 0; i < n; ++i) {
        double* row = &m.data[static_cast<size_t>(i * c)];
        const double mx = *std::max_element(row, row + c);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int64_t j = 0; j < c; ++j) row[j] /= sum;
    }
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int64_t d = x.rank() == 1 ? x.shape[0] : x.cols();
    const int64_t n = x.rank() == 1 ? 1 : x.rows();
    if (x.rank() > 2 || gain.rank() != 1 || bias.rank() != 1 || gain.shape[0] != d || bias.shape[0] != d)
        throw Error(ErrorKind::dimension, "layer_norm: incompatible shapes");
    Tensor out = x;
    for (int64_t i = 0; i < n; ++i) {
        double* row = &out.data[static_cast<size_t>(i * d)];
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j)
            row[j] = (row[j] - mean) * inv * gain.data[static_cast<size_t>(j)] + bias.data[static_cast<size_t>(j)];
    }
    return out;
}

std::vector<double> dropout_mask(int64_t n, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw Error(ErrorKind::config, "dropout: rate must be in [0,1)");
    std::vector<double> mask(static_cast<size_t>(n), 1.0);
    if (rate == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train) {
    if (rate < 0.0 || rate >= 1.0) throw Error(ErrorKind::config, "dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) return x;
    Tensor out = x;
    const std::vector<double> mask = dropout_mask(x.numel(), rate, rng);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
    return out;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

double gelu_grad_scalar(double x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = gelu_scalar(v);
    return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
    if (x.rank() != 2) throw Error(ErrorKind::dimension, "l2_normalize_rows: tensor is not rank-2");
    Tensor out = x;
    const int64_t n = x.rows(), d = x.cols();
    for (int64_t i = 0; i < n; ++i) {
        double* row = &out.data[static_cast<size_t>(i * d)];
        double sq = 0.0;
        for (int64_t j = 0; j < d; ++j) sq += row[j] * row[j];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) throw Error(ErrorKind::numeric, "l2_normalize_rows: zero-norm row");
        for (int64_t j = 0; j < d; ++j) row[j] /= norm;
    }
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.shape[0] != b.shape[0]) dim_error("dot", a, b);
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double l2_norm(const Tensor& a) {
    double sq = 0.0;
    for (double v : a.data) sq += v * v;
    return std::sqrt(sq);
}

double similarity(const Tensor& a, const Tensor& b, double tau) {
    if (tau <= 0.0) throw Error(ErrorKind::config, "similarity: tau must be positive");
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::numeric, "similarity: zero-norm vector");
    return dot(a, b) / (na * nb * tau);
}

}  // namespace mmrec
