#include "mmrec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mmrec {

namespace {

Tensor slice_block(const Tensor& m, int64_t r0, int64_t nr, int64_t c0, int64_t nc) {
    Tensor out = Tensor::zeros({nr, nc});
    for (int64_t i = 0; i < nr; ++i)
        for (int64_t j = 0; j < nc; ++j) out.at(i, j) = m.at(r0 + i, c0 + j);
    return out;
}

void add_block(Tensor& m, int64_t r0, int64_t c0, const Tensor& blk) {
    for (int64_t i = 0; i < blk.rows(); ++i)
        for (int64_t j = 0; j < blk.cols(); ++j) m.at(r0 + i, c0 + j) += blk.at(i, j);
}

}  // namespace

int Tape::add_node(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backprop,
                   Parameter* bound) {
    Node n;
    n.parents = std::move(parents);
    n.backprop = std::move(backprop);
    n.bound = bound;
    n.needs_grad = bound != nullptr || any_needs_grad(n.parents);
    if (bound) {
        n.grad = Tensor::zeros(bound->value.shape);
    } else {
        if (n.needs_grad) n.grad = Tensor::zeros(value.shape);
        n.value = std::move(value);
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

bool Tape::any_needs_grad(const std::vector<int>& parents) const {
    for (int p : parents)
        if (p >= 0 && nodes_[static_cast<size_t>(p)].needs_grad) return true;
    return false;
}

const Tensor& Tape::value(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.bound ? n.bound->value : n.value;
}

Tensor& Tape::grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

int Tape::leaf(Tensor value) { return add_node(std::move(value), {}, nullptr); }

int Tape::param(Parameter& p) { return add_node(Tensor{}, {}, nullptr, &p); }

int Tape::matmul(int a, int b) {
    Tensor c = mmrec::matmul(value(a), value(b));
    return add_node(std::move(c), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        if (t.nodes_[static_cast<size_t>(a)].needs_grad)
            add_inplace(t.grad(a), mmrec::matmul_nt(dc, t.value(b)));
        if (t.nodes_[static_cast<size_t>(b)].needs_grad)
            add_inplace(t.grad(b), mmrec::matmul_tn(t.value(a), dc));
    });
}

int Tape::matmul_nt(int a, int b) {
    Tensor c = mmrec::matmul_nt(value(a), value(b));
    return add_node(std::move(c), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        if (t.nodes_[static_cast<size_t>(a)].needs_grad)
            add_inplace(t.grad(a), mmrec::matmul(dc, t.value(b)));
        if (t.nodes_[static_cast<size_t>(b)].needs_grad)
            add_inplace(t.grad(b), mmrec::matmul_tn(dc, t.value(a)));
    });
}

int Tape::add(int a, int b) {
    Tensor c = mmrec::add(value(a), value(b));
    return add_node(std::move(c), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        if (t.nodes_[static_cast<size_t>(a)].needs_grad) add_inplace(t.grad(a), dc);
        if (t.nodes_[static_cast<size_t>(b)].needs_grad) add_inplace(t.grad(b), dc);
    });
}

int Tape::add_rowvec(int a, int row) {
    Tensor c = mmrec::add_rowvec(value(a), value(row));
    return add_node(std::move(c), {a, row}, [a, row](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        if (t.nodes_[static_cast<size_t>(a)].needs_grad) add_inplace(t.grad(a), dc);
        if (t.nodes_[static_cast<size_t>(row)].needs_grad) {
            Tensor& dr = t.grad(row);
            const int64_t n = dc.rows(), m = dc.cols();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) dr.data[static_cast<size_t>(j)] += dc.at(i, j);
        }
    });
}

int Tape::mul(int a, int b) {
    Tensor c = mmrec::mul(value(a), value(b));
    return add_node(std::move(c), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        if (t.nodes_[static_cast<size_t>(a)].needs_grad)
            add_inplace(t.grad(a), mmrec::mul(dc, t.value(b)));
        if (t.nodes_[static_cast<size_t>(b)].needs_grad)
            add_inplace(t.grad(b), mmrec::mul(dc, t.value(a)));
    });
}

int Tape::scale(int a, double c) {
    Tensor out = mmrec::scale(value(a), c);
    return add_node(std::move(out), {a}, [a, c](Tape& t, int self) {
        if (t.nodes_[static_cast<size_t>(a)].needs_grad)
            add_inplace(t.grad(a), mmrec::scale(t.grad(self), c));
    });
}

int Tape::transpose(int a) {
    Tensor out = mmrec::transpose(value(a));
    return add_node(std::move(out), {a}, [a](Tape& t, int self) {
        if (t.nodes_[static_cast<size_t>(a)].needs_grad)
            add_inplace(t.grad(a), mmrec::transpose(t.grad(self)));
    });
}

int Tape::concat_rows(const std::vector<int>& parts) {
    std::vector<const Tensor*> vals;
    vals.reserve(parts.size());
    for (int p : parts) vals.push_back(&value(p));
    Tensor out = mmrec::concat_rows(vals);
    return add_node(std::move(out), parts, [parts](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        const int64_t m = dc.cols();
        int64_t r0 = 0;
        for (int p : parts) {
            const int64_t nr = t.value(p).rows();
            if (t.nodes_[static_cast<size_t>(p)].needs_grad) {
                Tensor& dp = t.grad(p);
                for (int64_t i = 0; i < nr; ++i)
                    for (int64_t j = 0; j < m; ++j) dp.at(i, j) += dc.at(r0 + i, j);
            }
            r0 += nr;
        }
    });
}

int Tape::gather_rows(int a, std::vector<int64_t> rows) {
    const Tensor& av = value(a);
    const int64_t m = av.cols();
    Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), m});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows())
            throw Error(ErrorKind::dimension, "gather_rows: row index out of range");
        for (int64_t j = 0; j < m; ++j) out.at(static_cast<int64_t>(i), j) = av.at(rows[i], j);
    }
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(rows));
    return add_node(std::move(out), {a}, [a, idx](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const Tensor& dc = t.grad(self);
        Tensor& da = t.grad(a);
        const int64_t m = dc.cols();
        for (size_t i = 0; i < idx->size(); ++i)
            for (int64_t j = 0; j < m; ++j) da.at((*idx)[i], j) += dc.at(static_cast<int64_t>(i), j);
    });
}

int Tape::emax(int a, int b) {
    Tensor c = mmrec::emax(value(a), value(b));
    return add_node(std::move(c), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& dc = t.grad(self);
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const bool na = t.nodes_[static_cast<size_t>(a)].needs_grad;
        const bool nb = t.nodes_[static_cast<size_t>(b)].needs_grad;
        for (size_t i = 0; i < dc.data.size(); ++i) {
            if (av.data[i] >= bv.data[i]) {
                if (na) t.grad(a).data[i] += dc.data[i];
            } else {
                if (nb) t.grad(b).data[i] += dc.data[i];
            }
        }
    });
}

int Tape::softmax_rows(int a) {
    Tensor p = value(a);
    softmax_rows_inplace(p);
    return add_node(std::move(p), {a}, [a](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const Tensor& p = t.value(self);
        const Tensor& dp = t.grad(self);
        Tensor& da = t.grad(a);
        const int64_t n = p.rows(), c = p.cols();
        for (int64_t i = 0; i < n; ++i) {
            double inner = 0.0;
            for (int64_t j = 0; j < c; ++j) inner += dp.at(i, j) * p.at(i, j);
            for (int64_t j = 0; j < c; ++j) da.at(i, j) += p.at(i, j) * (dp.at(i, j) - inner);
        }
    });
}

int Tape::layer_norm(int x, int gain, int bias, double eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const Tensor& bv = value(bias);
    const int64_t n = xv.rank() == 1 ? 1 : xv.rows();
    const int64_t d = xv.rank() == 1 ? xv.shape[0] : xv.cols();
    if (gv.rank() != 1 || bv.rank() != 1 || gv.shape[0] != d || bv.shape[0] != d)
        throw Error(ErrorKind::dimension, "layer_norm: incompatible shapes");

    Tensor out = xv;
    auto cache = std::make_shared<std::pair<Tensor, std::vector<double>>>();
    cache->first = Tensor::zeros(xv.shape);  // normalized rows y
    cache->second.assign(static_cast<size_t>(n), 0.0);
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
        cache->second[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            const double y = (row[j] - mean) * inv;
            cache->first.data[static_cast<size_t>(i * d + j)] = y;
            row[j] = y * gv.data[static_cast<size_t>(j)] + bv.data[static_cast<size_t>(j)];
        }
    }
    return add_node(std::move(out), {x, gain, bias}, [x, gain, bias, cache, n, d](Tape& t, int self) {
        const Tensor& dout = t.grad(self);
        const Tensor& gv = t.value(gain);
        const Tensor& y = cache->first;
        const bool nx = t.nodes_[static_cast<size_t>(x)].needs_grad;
        const bool ng = t.nodes_[static_cast<size_t>(gain)].needs_grad;
        const bool nb = t.nodes_[static_cast<size_t>(bias)].needs_grad;
        for (int64_t i = 0; i < n; ++i) {
            const double inv = cache->second[static_cast<size_t>(i)];
            double mean_h = 0.0, mean_hy = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                const size_t k = static_cast<size_t>(i * d + j);
                const double h = dout.data[k] * gv.data[static_cast<size_t>(j)];
                mean_h += h;
                mean_hy += h * y.data[k];
            }
            mean_h /= static_cast<double>(d);
            mean_hy /= static_cast<double>(d);
            for (int64_t j = 0; j < d; ++j) {
                const size_t k = static_cast<size_t>(i * d + j);
                const double h = dout.data[k] * gv.data[static_cast<size_t>(j)];
                if (nx) t.grad(x).data[k] += inv * (h - mean_h - y.data[k] * mean_hy);
                if (ng) t.grad(gain).data[static_cast<size_t>(j)] += dout.data[k] * y.data[k];
                if (nb) t.grad(bias).data[static_cast<size_t>(j)] += dout.data[k];
            }
        }
    });
}

int Tape::gelu(int a) {
    Tensor out = mmrec::gelu(value(a));
    return add_node(std::move(out), {a}, [a](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const Tensor& dc = t.grad(self);
        const Tensor& xv = t.value(a);
        Tensor& da = t.grad(a);
        for (size_t i = 0; i < dc.data.size(); ++i)
            da.data[i] += dc.data[i] * gelu_grad_scalar(xv.data[i]);
    });
}

int Tape::dropout(int a, double rate, Rng* rng, bool train) {
    if (rate < 0.0 || rate >= 1.0) throw Error(ErrorKind::config, "dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) return a;  // exact identity, consumes no randomness
    if (rng == nullptr) throw Error(ErrorKind::contract, "dropout: train mode requires an rng");
    auto mask = std::make_shared<std::vector<double>>(dropout_mask(value(a).numel(), rate, *rng));
    Tensor out = value(a);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= (*mask)[i];
    return add_node(std::move(out), {a}, [a, mask](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const Tensor& dc = t.grad(self);
        Tensor& da = t.grad(a);
        for (size_t i = 0; i < dc.data.size(); ++i) da.data[i] += dc.data[i] * (*mask)[i];
    });
}

int Tape::l2_normalize_rows(int a) {
    const Tensor& xv = value(a);
    Tensor out = mmrec::l2_normalize_rows(xv);
    auto norms = std::make_shared<std::vector<double>>();
    norms->reserve(static_cast<size_t>(xv.rows()));
    for (int64_t i = 0; i < xv.rows(); ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < xv.cols(); ++j) sq += xv.at(i, j) * xv.at(i, j);
        norms->push_back(std::sqrt(sq));
    }
    return add_node(std::move(out), {a}, [a, norms](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const Tensor& y = t.value(self);
        const Tensor& dy = t.grad(self);
        Tensor& da = t.grad(a);
        const int64_t n = y.rows(), d = y.cols();
        for (int64_t i = 0; i < n; ++i) {
            double inner = 0.0;
            for (int64_t j = 0; j < d; ++j) inner += y.at(i, j) * dy.at(i, j);
            const double inv = 1.0 / (*norms)[static_cast<size_t>(i)];
            for (int64_t j = 0; j < d; ++j) da.at(i, j) += (dy.at(i, j) - y.at(i, j) * inner) * inv;
        }
    });
}

int Tape::sum_all(int a) {
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return add_node(Tensor({1}, {s}), {a}, [a](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const double g = t.grad(self).data[0];
        for (double& v : t.grad(a).data) v += g;
    });
}

int Tape::mean_all(int a) {
    const int64_t n = value(a).numel();
    if (n == 0) throw Error(ErrorKind::input, "mean_all: empty tensor");
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return add_node(Tensor({1}, {s / static_cast<double>(n)}), {a}, [a, n](Tape& t, int self) {
        if (!t.nodes_[static_cast<size_t>(a)].needs_grad) return;
        const double g = t.grad(self).data[0] / static_cast<double>(n);
        for (double& v : t.grad(a).data) v += g;
    });
}

int Tape::cross_entropy_rows(int logits, std::vector<int64_t> targets) {
    const Tensor& lv = value(logits);
    const int64_t n = lv.rows(), c = lv.cols();
    if (static_cast<int64_t>(targets.size()) != n)
        throw Error(ErrorKind::dimension, "cross_entropy_rows: one target per row required");
    if (n == 0) throw Error(ErrorKind::input, "cross_entropy_rows: empty batch");
    auto probs = std::make_shared<Tensor>(lv);
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= c)
            throw Error(ErrorKind::input, "cross_entropy_rows: target out of range");
        double* row = &probs->data[static_cast<size_t>(i * c)];
        const double mx = *std::max_element(row, row + c);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double lse = mx + std::log(sum);
        total += lse - lv.at(i, targets[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < c; ++j) row[j] /= sum;
    }
    auto tgt = std::make_shared<std::vector<int64_t>>(std::move(targets));
    return add_node(Tensor({1}, {total / static_cast<double>(n)}), {logits},
                    [logits, probs, tgt, n, c](Tape& t, int self) {
                        if (!t.nodes_[static_cast<size_t>(logits)].needs_grad) return;
                        const double g = t.grad(self).data[0] / static_cast<double>(n);
                        Tensor& dl = t.grad(logits);
                        for (int64_t i = 0; i < n; ++i) {
                            for (int64_t j = 0; j < c; ++j) {
                                double p = probs->at(i, j);
                                if (j == (*tgt)[static_cast<size_t>(i)]) p -= 1.0;
                                dl.at(i, j) += p * g;
                            }
                        }
                    });
}

int Tape::attention(int q, int k, int v, int64_t n_heads, Segments segments) {
    const Tensor& qv = value(q);
    const Tensor& kv = value(k);
    const Tensor& vv = value(v);
    if (!qv.same_shape(kv) || !qv.same_shape(vv))
        throw Error(ErrorKind::dimension, "attention: q/k/v shapes differ");
    const int64_t rows = qv.rows(), d = qv.cols();
    if (n_heads < 1 || d % n_heads != 0)
        throw Error(ErrorKind::dimension, "attention: model dim not divisible by head count");
    int64_t covered = 0;
    for (const auto& [start, len] : segments) {
        if (start != covered || len < 1) throw Error(ErrorKind::contract, "attention: segments must tile the rows");
        covered += len;
    }
    if (covered != rows) throw Error(ErrorKind::contract, "attention: segments must tile the rows");

    const int64_t dh = d / n_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out = Tensor::zeros({rows, d});
    auto probs = std::make_shared<std::vector<Tensor>>();  // per (segment, head)
    probs->reserve(segments.size() * static_cast<size_t>(n_heads));
    for (const auto& [start, len] : segments) {
        for (int64_t h = 0; h < n_heads; ++h) {
            const Tensor qh = slice_block(qv, start, len, h * dh, dh);
            const Tensor kh = slice_block(kv, start, len, h * dh, dh);
            const Tensor vh = slice_block(vv, start, len, h * dh, dh);
            Tensor s = mmrec::scale(mmrec::matmul_nt(qh, kh), inv_scale);
            softmax_rows_inplace(s);
            const Tensor oh = mmrec::matmul(s, vh);
            add_block(out, start, h * dh, oh);
            probs->push_back(std::move(s));
        }
    }
    auto segs = std::make_shared<Segments>(std::move(segments));
    return add_node(std::move(out), {q, k, v},
                    [q, k, v, n_heads, dh, inv_scale, probs, segs](Tape& t, int self) {
                        const Tensor& dout = t.grad(self);
                        const Tensor& qv = t.value(q);
                        const Tensor& kv = t.value(k);
                        const Tensor& vv = t.value(v);
                        const bool nq = t.nodes_[static_cast<size_t>(q)].needs_grad;
                        const bool nk = t.nodes_[static_cast<size_t>(k)].needs_grad;
                        const bool nv = t.nodes_[static_cast<size_t>(v)].needs_grad;
                        size_t pi = 0;
                        for (const auto& [start, len] : *segs) {
                            for (int64_t h = 0; h < n_heads; ++h, ++pi) {
                                const Tensor& p = (*probs)[pi];
                                const Tensor doh = slice_block(dout, start, len, h * dh, dh);
                                const Tensor qh = slice_block(qv, start, len, h * dh, dh);
                                const Tensor kh = slice_block(kv, start, len, h * dh, dh);
                                const Tensor vh = slice_block(vv, start, len, h * dh, dh);
                                if (nv) add_block(t.grad(v), start, h * dh, mmrec::matmul_tn(p, doh));
                                // dS = P (.) (dP - rowsum(dP (.) P)), dP = dOh Vh^T
                                Tensor dp = mmrec::matmul_nt(doh, vh);
                                for (int64_t i = 0; i < len; ++i) {
                                    double inner = 0.0;
                                    for (int64_t j = 0; j < len; ++j) inner += dp.at(i, j) * p.at(i, j);
                                    for (int64_t j = 0; j < len; ++j)
                                        dp.at(i, j) = p.at(i, j) * (dp.at(i, j) - inner) * inv_scale;
                                }
                                if (nq) add_block(t.grad(q), start, h * dh, mmrec::matmul(dp, kh));
                                if (nk) add_block(t.grad(k), start, h * dh, mmrec::matmul_tn(dp, qh));
                            }
                        }
                    });
}

int Tape::compose_tokens(int vproj, int tproj, int mask_emb, int modality_emb, int pos_emb,
                         std::vector<TokenSpec> tokens) {
    const Tensor& mask_v = value(mask_emb);
    const Tensor& mod_v = value(modality_emb);
    if (mask_v.rank() != 1) throw Error(ErrorKind::dimension, "compose_tokens: mask embedding must be rank-1");
    const int64_t d = mask_v.shape[0];
    if (mod_v.rank() != 2 || mod_v.rows() != 2 || mod_v.cols() != d)
        throw Error(ErrorKind::dimension, "compose_tokens: modality embedding must be (2,d)");
    const Tensor& pos_v = value(pos_emb);
    if (pos_v.rank() != 2 || pos_v.cols() != d)
        throw Error(ErrorKind::dimension, "compose_tokens: positional table must be (N,d)");

    const int64_t n = static_cast<int64_t>(tokens.size());
    Tensor out = Tensor::zeros({n, d});
    for (int64_t r = 0; r < n; ++r) {
        const TokenSpec& tok = tokens[static_cast<size_t>(r)];
        if (tok.modality != 0 && tok.modality != 1)
            throw Error(ErrorKind::input, "compose_tokens: modality must be 0 or 1");
        const double* src = nullptr;
        if (tok.feat_row < 0) {
            src = mask_v.data.data();
        } else {
            const int proj = tok.modality == 0 ? vproj : tproj;
            if (proj < 0) throw Error(ErrorKind::contract, "compose_tokens: token references absent projection");
            const Tensor& pv = value(proj);
            if (pv.cols() != d || tok.feat_row >= pv.rows())
                throw Error(ErrorKind::dimension, "compose_tokens: feature row out of range");
            src = &pv.data[static_cast<size_t>(tok.feat_row) * static_cast<size_t>(d)];
        }
        if (tok.position >= pos_v.rows())
            throw Error(ErrorKind::contract, "compose_tokens: position exceeds positional table");
        const double* mod = &mod_v.data[static_cast<size_t>(tok.modality) * static_cast<size_t>(d)];
        const double* pos = tok.position >= 0 ? &pos_v.data[static_cast<size_t>(tok.position) * static_cast<size_t>(d)] : nullptr;
        double* dst = &out.data[static_cast<size_t>(r) * static_cast<size_t>(d)];
        for (int64_t j = 0; j < d; ++j) {
            double acc = src[j] + mod[j];
            if (pos) acc += pos[j];
            dst[j] = acc;
        }
    }

    std::vector<int> parents{mask_emb, modality_emb, pos_emb};
    if (vproj >= 0) parents.push_back(vproj);
    if (tproj >= 0) parents.push_back(tproj);
    auto toks = std::make_shared<std::vector<TokenSpec>>(std::move(tokens));
    return add_node(std::move(out), parents,
                    [vproj, tproj, mask_emb, modality_emb, pos_emb, toks, d](Tape& t, int self) {
                        const Tensor& dout = t.grad(self);
                        auto needs = [&t](int id) {
                            return id >= 0 && t.nodes_[static_cast<size_t>(id)].needs_grad;
                        };
                        const bool nm = needs(mask_emb), nmod = needs(modality_emb), npos = needs(pos_emb);
                        for (size_t r = 0; r < toks->size(); ++r) {
                            const TokenSpec& tok = (*toks)[r];
                            const double* g = &dout.data[r * static_cast<size_t>(d)];
                            if (tok.feat_row < 0) {
                                if (nm) {
                                    double* dst = t.grad(mask_emb).data.data();
                                    for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                                }
                            } else {
                                const int proj = tok.modality == 0 ? vproj : tproj;
                                if (needs(proj)) {
                                    double* dst = &t.grad(proj).data[static_cast<size_t>(tok.feat_row) *
                                                                     static_cast<size_t>(d)];
                                    for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                                }
                            }
                            if (nmod) {
                                double* dst = &t.grad(modality_emb).data[static_cast<size_t>(tok.modality) *
                                                                         static_cast<size_t>(d)];
                                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                            }
                            if (npos && tok.position >= 0) {
                                double* dst = &t.grad(pos_emb).data[static_cast<size_t>(tok.position) *
                                                                    static_cast<size_t>(d)];
                                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                            }
                        }
                    });
}

void Tape::backward(int root) {
    if (backward_done_) throw Error(ErrorKind::contract, "backward: tape already consumed");
    backward_done_ = true;
    Node& r = nodes_[static_cast<size_t>(root)];
    const Tensor& rv = value(root);
    if (rv.numel() != 1) throw Error(ErrorKind::contract, "backward: root must be scalar");
    if (!r.needs_grad) return;
    r.grad.data[0] = 1.0;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.needs_grad && n.backprop) n.backprop(*this, id);
    }
    for (Node& n : nodes_) {
        if (n.bound) add_inplace(n.bound->grad, n.grad);
    }
}

}  // namespace mmrec
