#pragma once

#include "tensor.h"

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace gridvla {

// Gradients produced by Tape::backward, keyed by tape node id.
class GradientMap {
public:
    // Gradient of the loss w.r.t. `t`, shaped like `t`. Zero tensor if the
    // loss does not depend on it. `t` must be on the tape.
    Tensor grad(const Tensor & t) const;

    bool contains(const Tensor & t) const;

private:
    std::unordered_map<int, std::vector<double>> grads_;

    friend class Tape;
};

// Define-by-run reverse-mode tape. Operations with at least one recorded
// input append a node with a backward rule; pure-constant subgraphs are
// evaluated eagerly and never recorded. A Tape instance is single-threaded;
// independent tapes may run concurrently.
class Tape {
public:
    // Registers `t` as a differentiable source (parameter or input).
    Tensor leaf(const Tensor & t);

    // -- linear algebra -----------------------------------------------------
    Tensor matmul(const Tensor & a, const Tensor & b);       // [m,k]x[k,n] -> [m,n]
    Tensor transpose(const Tensor & a);                      // [m,n] -> [n,m]

    // -- elementwise (strict shapes: no broadcasting except scalar) ---------
    Tensor add(const Tensor & a, const Tensor & b);
    Tensor add(const Tensor & a, double b);
    Tensor sub(const Tensor & a, const Tensor & b);
    Tensor mul(const Tensor & a, const Tensor & b);
    Tensor scale(const Tensor & a, double s);
    Tensor gelu(const Tensor & a); // tanh approximation

    // -- structured ----------------------------------------------------------
    Tensor softmax(const Tensor & a);                        // last axis, max-subtracted
    Tensor layer_norm(const Tensor & a, const Tensor & gamma, const Tensor & beta, double eps);
    Tensor embedding_lookup(const Tensor & table, const std::vector<int> & ids);
    Tensor masked_cross_entropy(const Tensor & logits, const std::vector<int> & targets,
                                const std::vector<uint8_t> & mask);

    // -- layout --------------------------------------------------------------
    Tensor slice_rows(const Tensor & a, int64_t row0, int64_t nrows);
    Tensor slice_cols(const Tensor & a, int64_t col0, int64_t ncols);
    Tensor concat_rows(std::span<const Tensor> parts);
    Tensor concat_cols(std::span<const Tensor> parts);
    Tensor broadcast_rows(const Tensor & row, int64_t nrows); // [d] or [1,d] -> [n,d]

    // -- reductions ----------------------------------------------------------
    Tensor sum_all(const Tensor & a); // scalar

    // Reverse pass from a scalar loss. `seed` is d(out)/d(loss), 1 by default.
    GradientMap backward(const Tensor & loss, double seed = 1.0);

    size_t size() const { return nodes_.size(); }

private:
    using BackwardFn = std::function<void(const std::vector<double> & gout, Tape & tape)>;

    struct Node {
        BackwardFn backward; // null for leaves
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_; // live only during backward()

    Tensor make(Shape shape, std::vector<double> values, std::initializer_list<const Tensor *> inputs,
                BackwardFn fn);
    std::vector<double> & accum(int node, int64_t numel);
};

// Max over coordinates of |analytic - numeric| / max(1, |numeric|), where
// numeric is the central difference of f through fresh forward passes and
// analytic comes from one backward pass. `f` must build a scalar from `x`
// on the tape it is given, deterministically.
double finite_diff_check(const std::function<Tensor(Tape &, const Tensor &)> & f, const Tensor & x,
                         double eps);

} // namespace gridvla
