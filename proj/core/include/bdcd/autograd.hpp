#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "bdcd/tensor.hpp"

namespace bdcd::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the dynamically built computation graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    // Accumulates into inputs' grads given this node's grad.
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor& g);
    Tensor& ensure_grad();
};

/// Value-semantics handle to a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    static Var constant(Tensor t);
    static Var param(Tensor t);  // requires_grad = true, leaf

    const Tensor& val() const { return n_->value; }
    Tensor& val() { return n_->value; }
    Tensor& grad() const { return n_->ensure_grad(); }
    bool defined() const { return n_ != nullptr; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

/// Reverse-mode sweep from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

/// Build a graph node with a caller-supplied backward; used for fused ops
/// (losses) whose gradients are cheaper hand-derived than composed.
Var custom_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs(const Var& a);
Var relu(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<long> shape);
Var concat_channels(const Var& a, const Var& b);          // (Ca,H,W)+(Cb,H,W)
Var chw_to_tokens(const Var& x);                          // (C,H,W) -> (H*W, C)
Var tokens_to_chw(const Var& t, long c, long h, long w);  // (H*W, C) -> (C,H,W)
Var slice_cols(const Var& x, long c0, long c1);           // (T,D) -> (T,c1-c0)
Var concat_cols(const std::vector<Var>& xs);
Var transpose2d(const Var& x);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                       // (m,k)x(k,n)
Var linear(const Var& x, const Var& w, const Var& b);         // (T,Din)x(Din,Dout)+b
Var add_row_broadcast(const Var& x, const Var& b);            // (T,D)+(D)

// ---- normalization / activation ----
Var softmax_lastdim(const Var& x);                             // rows of (T,D)
Var channel_softmax(const Var& x);                             // over C of (C,H,W)
Var layernorm_lastdim(const Var& x, const Var& g, const Var& b, double eps = 1e-5);
Var channel_layernorm(const Var& x, const Var& g, const Var& b, double eps = 1e-5);

// ---- spatial ----
// 2D convolution, stride 1, replicate padding, odd square kernel.
Var conv2d(const Var& x, const Var& w, const Var& b);  // w: (Cout,Cin,k,k)
Var maxpool2(const Var& x);                            // 2x2, stride 2
Var upsample_bilinear2(const Var& x);                  // x2, half-pixel centers

// Positional embedding for an HxW token grid from learned row/col tables
// (each (max_extent, D)): out[y*w+x] = rows[y] + cols[x].
Var pos_embed_2d(const Var& rows, const Var& cols, long h, long w);

// ---- reductions ----
Var mean_all(const Var& x);
Var sum_all(const Var& x);

}  // namespace bdcd::ag
