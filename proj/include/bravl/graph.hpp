#ifndef BRAVL_GRAPH_HPP
#define BRAVL_GRAPH_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "bravl/matrix.hpp"

namespace bravl {

// Tape-based reverse-mode differentiation over matrix-valued nodes. The op
// set is exactly what the training objectives compose: affine maps, the
// rectifier, clamp, exp/log, log-sum-exp, Gaussian log-densities, and
// reparameterized sampling with frozen noise. Gradients of parameter leaves
// accumulate into caller-owned sink matrices, so several backward passes
// (one per objective term) can share one gradient set.
class Graph {
public:
    using Var = std::int32_t;

    Graph() = default;
    // node closures capture this; the graph must stay where it was built
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = delete;
    Graph& operator=(Graph&&) = delete;

    Var input(Matrix value);                           // constant leaf
    Var param(const Matrix& value, Matrix* grad_sink); // differentiable leaf

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var matmul(Var a, Var b);
    Var add_rowvec(Var a, Var bias); // bias is 1 x d, broadcast over rows
    // x * w + bias with optional rectification, one node per layer
    Var affine(Var x, Var w, Var bias, bool rectify);
    Var relu(Var a);
    Var exp_op(Var a);
    Var log_op(Var a);
    Var clamp(Var a, double lo, double hi);
    Var slice_rows(Var a, std::size_t r0, std::size_t r1); // [r0, r1)
    Var slice_cols(Var a, std::size_t c0, std::size_t c1); // [c0, c1)
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var tile_rows(Var a, std::size_t k);
    Var shift_rows(Var a, std::size_t s); // out row i = in row (i+s) mod n
    Var rowwise_scale(Var a, std::vector<double> w);
    Var rowsum(Var a);  // n x d -> n x 1
    Var sum_all(Var a); // -> 1 x 1
    Var logsumexp_cols(Var a);
    Var blocks_to_cols(Var a, std::size_t k); // (k*n) x 1 -> n x k, column = block

    // fused kernels for the statistical pieces
    Var reparam(Var mean, Var logvar, Var noise);      // mean + exp(logvar/2) * noise
    Var gauss_logprob(Var z, Var mean, Var logvar);    // n x 1 per-row log density
    Var sqerr_rowsum(Var a, Var b);                    // n x 1 row sums of (a-b)^2
    Var kl_std_rowsum(Var mean, Var logvar);           // n x 1 KL(q || N(0,I)) per row

    // Mixture kernels over per-component parameter matrices (each n x d).
    // K draw blocks are stacked: output row i reads component choice[i] at
    // source row i % n, avoiding materialized tiles.
    Var mixture_sample(const std::vector<Var>& means, const std::vector<Var>& logvars,
                       std::vector<std::size_t> choice, Var noise);
    // (k*n) x 1 log density of the uniform mixture, stable log-sum-exp
    Var mixture_logprob(Var z, const std::vector<Var>& means, const std::vector<Var>& logvars);
    // row sums of (a[i] - x[(i%n + shift) mod n])^2 against a constant target,
    // again without materializing the k tiled copies
    Var sqerr_rowsum_shifted(Var a, Matrix x, std::size_t shift);

    Var mean_rows(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).rows)); }

    const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
    double scalar(Var v) const;

    // Accumulates d(seed * node_value)/d(param) into every reachable sink.
    void backward(Var root, double seed = 1.0);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Matrix* sink = nullptr;
        std::function<void()> back;
        const char* tag = nullptr;
    };

    Var emit(Matrix value, bool needs_grad, std::function<void()> back);
    Matrix& grad_of(Var v);
    bool has_grad(Var v) const;
    void accumulate(Var v, const Matrix& g);

    std::vector<Node> nodes_;
};

} // namespace bravl

#endif
