#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fire2/tensor.hpp"

namespace fire2 {

/// Trainable tensor plus its accumulated gradient and Adam state.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    int64_t adam_step = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor t)
        : name(std::move(n)),
          value(std::move(t)),
          grad(value.shape),
          adam_m(value.shape),
          adam_v(value.shape) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Adam with decoupled-from-schedule L2 weight decay (grad += wd * theta).
struct AdamConfig {
    double lr = 3.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
};

void adam_step(Parameter& p, const AdamConfig& cfg, double lr);

/// Handle into a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are created in topological order by construction;
/// backward() walks them in reverse. One Tape per training step, then dropped.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- leaves ----
    Var constant(Tensor t);              // no gradient tracked
    Var leaf(Tensor t);                  // gradient readable after backward
    Var param(Parameter& p);             // gradient accumulated into p.grad
    Var detach(Var x);                   // same value, gradient flow cut

    // ---- elementwise / scalar ----
    Var add(Var a, Var b);               // same shape
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double s);
    Var relu(Var x);
    Var clamp_min(Var x, double lo);

    // ---- [B,C,H,W] with [B,C] channel statistics ----
    Var add_channels(Var x, Var s);
    Var sub_channels(Var x, Var s);
    Var mul_channels(Var x, Var s);
    Var div_channels(Var x, Var s);
    Var spatial_mean(Var x);                     // -> [B,C]
    Var spatial_std(Var x, Var mean);            // population std -> [B,C]

    // ---- shape ----
    Var slice_rows(Var x, int h0, int h1);       // along H of [B,C,H,W]
    Var concat_rows(const std::vector<Var>& parts);
    Var gather_batch(Var x, std::vector<int> idx);          // rows of dim 0
    Var mix_batch(std::vector<char> take_a, Var a, Var b);  // per-row select

    // ---- layers ----
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var instance_norm(Var x, Var gamma, Var beta, double eps);
    Var global_max_pool(Var x);                  // [B,C,H,W] -> [B,C]
    Var linear(Var x, Var w, Var b);             // x[B,C] * w[K,C]^T + b
    Var matmul_nt(Var x, Var w);                 // x[B,C] * w[K,C]^T
    Var l2_normalize_rows(Var x, double eps = 1e-12);

    /// sum_i x_i * w_i -> scalar.
    Var weighted_sum(Var x, Tensor w);

    // ---- losses (scalar results, shape {1}) ----
    /// -(1/B) sum_b sum_k A[b,k] * logsoftmax(logits)[b,k]; rows of A sum to 1.
    Var softmax_cross_entropy(Var logits, Tensor target_weights);
    /// Batch-hard triplet on Euclidean distances; throws if the batch lacks a
    /// positive or negative for some anchor.
    Var triplet_batch_hard(Var emb, const std::vector<int>& ids, double margin);

    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].val; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool requires_grad = false;
        Parameter* leaf_param = nullptr;
        std::function<void(Tape&, Node&)> back;
    };

    Var make(Tensor val, bool requires_grad);
    Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& cnode(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Tensor& grad_buf(Var v);
    bool needs(Var v) const { return cnode(v).requires_grad; }

    std::vector<Node> nodes_;
};

}  // namespace fire2
