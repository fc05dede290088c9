#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mmrec/tensor.hpp"

namespace mmrec {

// Trainable tensor with an accumulating gradient buffer of the same shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape);
    }
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Token assembly descriptor: one row of the encoder input. `feat_row` indexes
// the projected feature matrix of the token's modality, or -1 for the mask
// embedding. `position` indexes the positional table, or -1 for none.
struct TokenSpec {
    int32_t modality = 0;  // 0 visual, 1 text
    int32_t feat_row = -1;
    int32_t position = -1;
};

using Segments = std::vector<std::pair<int64_t, int64_t>>;  // (start, length) in rows

// Reverse-mode tape over Tensors. Nodes are created in topological order;
// backward() walks them in reverse and finally folds gradients of bound nodes
// into their Parameter's grad buffer. Values of bound nodes alias the
// parameter storage, which must stay alive and unmodified while the tape is.
class Tape {
  public:
    int leaf(Tensor value);
    int param(Parameter& p);

    int matmul(int a, int b);
    int matmul_nt(int a, int b);  // A * B^T
    int add(int a, int b);
    int add_rowvec(int a, int row);
    int mul(int a, int b);
    int scale(int a, double c);
    int transpose(int a);
    int concat_rows(const std::vector<int>& parts);
    int gather_rows(int a, std::vector<int64_t> rows);
    int emax(int a, int b);
    int softmax_rows(int a);
    int layer_norm(int x, int gain, int bias, double eps);
    int gelu(int a);
    int dropout(int a, double rate, Rng* rng, bool train);
    int l2_normalize_rows(int a);
    int sum_all(int a);
    int mean_all(int a);

    // Mean cross-entropy of per-row targets under a stable row softmax.
    int cross_entropy_rows(int logits, std::vector<int64_t> targets);

    // Multi-head self-attention restricted to row segments. q, k, v are
    // (T, d) with d divisible by n_heads; attention never crosses a segment
    // boundary.
    int attention(int q, int k, int v, int64_t n_heads, Segments segments);

    // Builds the (T, d) encoder input from projected modality features plus
    // mask / modality / positional embeddings. vproj or tproj may be -1 when
    // no token uses that modality's features.
    int compose_tokens(int vproj, int tproj, int mask_emb, int modality_emb, int pos_emb,
                       std::vector<TokenSpec> tokens);

    const Tensor& value(int id) const;
    Tensor& grad(int id);

    // Seeds d(root)=1 (root must be scalar), propagates, then accumulates
    // bound-node gradients into their Parameters. Single use per tape.
    void backward(int root);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;               // unused when bound != nullptr
        Tensor grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backprop;
        Parameter* bound = nullptr;
        bool needs_grad = false;
    };

    int add_node(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backprop,
                 Parameter* bound = nullptr);
    bool any_needs_grad(const std::vector<int>& parents) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace mmrec
