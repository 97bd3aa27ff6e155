#pragma once
// Minimal reverse-mode differentiation over dense double tensors: enough for
// small feed-forward stacks, a gated recurrent cell, categorical sampling
// with score-function gradients, and the decoupled AdamW update. Graphs are
// define-by-run on a Tape; creation order doubles as topological order.

#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgame/rng.hpp"

namespace rgame::ad {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, double fill = 0.0);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    static Tensor vector_of(std::vector<double> values);
    static Tensor scalar(double v);
};

// A named trainable tensor with its persistent gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape, 0.0) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> back;  // pulls this node's grad into its parents
    Parameter* bound = nullptr;
};

struct Var {
    Tape* tape = nullptr;
    Node* node = nullptr;

    const Tensor& value() const { return node->value; }
    const Tensor& grad() const { return node->grad; }
    std::size_t size() const { return node->value.size(); }
};

class Tape {
public:
    // Constant leaf; no gradient flows into it.
    Var input(Tensor value);
    Var constant(double v) { return input(Tensor::scalar(v)); }
    // Differentiable leaf; backward() accumulates into p.grad.
    Var param(Parameter& p);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double c);
    Var matvec(Var w, Var x);  // w: (m,n), x: (n) -> (m)
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var concat(const std::vector<Var>& parts);
    Var slice(Var a, std::size_t start, std::size_t len);
    Var sum(Var a);
    Var mean(Var a);
    Var dot(Var a, Var b);
    Var softmax(Var logits);
    Var log_softmax(Var logits);
    Var select(Var a, std::size_t index);
    Var embedding(Var table, std::size_t row);
    // Shannon entropy of a probability vector (nats). Probabilities must be
    // non-negative and sum to 1 within 1e-6.
    Var entropy(Var probs);

    // Draws an index from softmax(logits); the returned log-probability node
    // is differentiable w.r.t. the logits.
    std::pair<std::size_t, Var> sample_categorical(Var logits, Rng& rng);
    std::size_t argmax(Var logits) const;

    // Reverse sweep from a scalar loss. Each node is visited exactly once,
    // in reverse creation order.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    Node* fresh(Tensor value);
    Var wrap(Node* n) { return Var{this, n}; }

    std::deque<Node> nodes_;
};

std::vector<double> softmax_values(const std::vector<double>& logits);

struct AdamWConfig {
    double lr = 3e-3;
    double beta1 = 0.99;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

    void step();
    void zero_grad();
    std::size_t step_count() const { return step_; }

private:
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t step_ = 0;
};

// Deterministic initialisers.
void init_normal(Parameter& p, Rng& rng, double stddev);
void init_zeros(Parameter& p);

// Text checkpoint format: hex floats, bit-exact round trip.
void save_checkpoint(const std::vector<Parameter*>& params, const std::string& path);
void load_checkpoint(const std::vector<Parameter*>& params, const std::string& path);
std::uint64_t parameter_hash(const std::vector<Parameter*>& params);

}  // namespace rgame::ad
