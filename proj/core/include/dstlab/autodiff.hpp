#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "dstlab/parameters.hpp"
#include "dstlab/rng.hpp"
#include "dstlab/tensor.hpp"

namespace dstlab::numeric {

// Reverse-mode tape over dense tensors. A fresh graph is built per forward
// pass; clear() keeps the node storage allocated so per-sample training steps
// do not churn the allocator. Nodes hold their own scratch (aux) tensor so
// backward closures only capture small POD and stay within std::function's
// small-buffer optimization.
class Tape {
public:
    using Id = int;

    void clear();
    std::size_t size() const { return nodes_.size(); }

    Id constant(Tensor v);
    Id parameter(Parameter& p);

    const Tensor& value(Id id) const;
    Tensor& grad(Id id);  // lazily allocated, zero-filled
    double scalar_value(Id id) const;

    // ---- elementwise / structural ----
    Id add(Id a, Id b);                    // same shape
    Id add_bias(Id x, Id b);               // m*n plus length-n row broadcast
    Id scale(Id a, double c);
    Id slice_rows(Id a, int r0, int r1);   // half-open
    Id slice_cols(Id a, int c0, int c1);
    Id concat_cols(const std::vector<Id>& parts);

    // ---- linear algebra ----
    Id matmul(Id a, Id b);     // (m*k)(k*n)
    Id matmul_nt(Id a, Id b);  // (m*k)(n*k)^T -> m*n

    // ---- nonlinearities / normalization ----
    Id softmax_rows(Id a);
    Id log_softmax_row(Id a);  // single row / vector
    Id layer_norm_rows(Id x, Id gain, Id bias, double eps);
    Id gelu(Id x);
    Id dropout(Id x, double p, Rng& rng);  // inverted dropout; call only in training

    // ---- embeddings / losses ----
    Id embed(Parameter& table, const std::vector<int>& ids);  // gather rows
    // Scores s_k = -||g - candidates[k]||_2 for a length-d row g.
    Id neg_l2_scores(Id g, const Tensor& candidates);
    // -sum_i w_i * logp[i] over sparse (index, weight) targets; scalar.
    Id weighted_nll(Id logp, const std::vector<std::pair<int, double>>& weights);
    Id sum(const std::vector<Id>& scalars);
    Id sum_elements(Id a);  // scalar sum of all entries

    // Populates gradients of every reachable parameter (accumulating into
    // Parameter::grad). Throws ShapeError if loss is not a scalar node.
    void backward(Id loss);

    // helpers
    Id linear(Id x, Id w, Id b) { return add_bias(matmul(x, w), b); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Tensor aux;  // scratch persisted for the backward pass
        Parameter* param = nullptr;
        bool needs_grad = false;
        std::function<void(Tape&, Id)> back;
    };

    std::vector<Node> nodes_;

    Id push(Node n);
    const Tensor& val(Id id) const { return nodes_[id].param ? nodes_[id].param->value : nodes_[id].value; }
    bool has_grad(Id id) const { return !nodes_[id].grad.data.empty(); }
    void accumulate(Id id, const double* g, std::int64_t n);
};

// Multi-head attention with learned projections: query/key/value rows are
// mapped through per-matrix projections, attended per head with 1/sqrt(d_head)
// scaling, concatenated and output-projected. Each of the m query rows attends
// independently over the n memory rows.
struct AttentionWeights {
    Tape::Id wq, bq, wk, bk, wv, bv, wo, bo;
};

Tape::Id multi_head_attention(Tape& tape, Tape::Id query, Tape::Id keys, Tape::Id values,
                              const AttentionWeights& w, int n_heads);

}  // namespace dstlab::numeric
