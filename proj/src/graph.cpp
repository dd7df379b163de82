#include "bravl/graph.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bravl {

namespace {

// Graph buffers are multi-megabyte and freed wholesale after every step.
// glibc serves blocks that large from mmap and returns them to the kernel on
// free, so each step would re-fault every page. Keep them on the heap.
[[maybe_unused]] const bool malloc_tuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return true;
}();

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

ConstMap cmap(const Matrix& m) {
    return ConstMap(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}

MutMap mmap(Matrix& m) {
    return MutMap(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}

// out += op(a) * op(b)
void gemm_acc(Matrix& out, const Matrix& a, bool ta, const Matrix& b, bool tb) {
    auto o = mmap(out);
    if (!ta && !tb)
        o.noalias() += cmap(a) * cmap(b);
    else if (ta && !tb)
        o.noalias() += cmap(a).transpose() * cmap(b);
    else if (!ta && tb)
        o.noalias() += cmap(a) * cmap(b).transpose();
    else
        o.noalias() += cmap(a).transpose() * cmap(b).transpose();
}

} // namespace

Graph::Var Graph::emit(Matrix value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Matrix& Graph::grad_of(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (n.grad.empty()) n.grad = Matrix::zeros(n.value.rows, n.value.cols);
    return n.grad;
}

bool Graph::has_grad(Var v) const { return !nodes_[static_cast<std::size_t>(v)].grad.empty(); }

void Graph::accumulate(Var v, const Matrix& g) {
    if (!nodes_[static_cast<std::size_t>(v)].requires_grad) return;
    Matrix& dst = grad_of(v);
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

Graph::Var Graph::input(Matrix value) { return emit(std::move(value), false, {}); }

Graph::Var Graph::param(const Matrix& value, Matrix* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(value)) throw std::invalid_argument("param: sink shape mismatch");
    Var v = emit(value, grad_sink != nullptr, {});
    nodes_[static_cast<std::size_t>(v)].sink = grad_sink;
    nodes_[static_cast<std::size_t>(v)].tag = "param";
    if (grad_sink) {
        nodes_[static_cast<std::size_t>(v)].back = [this, v] {
            Node& n = nodes_[static_cast<std::size_t>(v)];
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.sink->data[i] += n.grad.data[i];
        };
    }
    return v;
}

Graph::Var Graph::add(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch");
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
    bool req = nodes_[a].requires_grad || nodes_[b].requires_grad;
    Var v = emit(std::move(out), req, {});
    nodes_[v].tag = "add";
    nodes_[v].back = [this, v, a, b] {
        accumulate(a, nodes_[v].grad);
        accumulate(b, nodes_[v].grad);
    };
    return v;
}

Graph::Var Graph::sub(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("sub: shape mismatch");
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= vb.data[i];
    Var v = emit(std::move(out), nodes_[a].requires_grad || nodes_[b].requires_grad, {});
    nodes_[v].tag = "sub";
    nodes_[v].back = [this, v, a, b] {
        const Matrix& g = nodes_[v].grad;
        accumulate(a, g);
        if (nodes_[b].requires_grad) {
            Matrix& gb = grad_of(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
        }
    };
    return v;
}

Graph::Var Graph::mul(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("mul: shape mismatch");
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
    Var v = emit(std::move(out), nodes_[a].requires_grad || nodes_[b].requires_grad, {});
    nodes_[v].tag = "mul";
    nodes_[v].back = [this, v, a, b] {
        const Matrix& g = nodes_[v].grad;
        if (nodes_[a].requires_grad) {
            Matrix& ga = grad_of(a);
            const Matrix& vb2 = value(b);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
        }
        if (nodes_[b].requires_grad) {
            Matrix& gb = grad_of(b);
            const Matrix& va2 = value(a);
            for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va2.data[i];
        }
    };
    return v;
}

Graph::Var Graph::scale(Var a, double c) {
    Matrix out = value(a);
    for (double& x : out.data) x *= c;
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "scale";
    nodes_[v].back = [this, v, a, c] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += c * g.data[i];
    };
    return v;
}

Graph::Var Graph::add_scalar(Var a, double c) {
    Matrix out = value(a);
    for (double& x : out.data) x += c;
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "add_scalar";
    nodes_[v].back = [this, v, a] { accumulate(a, nodes_[v].grad); };
    return v;
}

Graph::Var Graph::matmul(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (va.cols != vb.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix out(va.rows, vb.cols);
    gemm_acc(out, va, false, vb, false);
    Var v = emit(std::move(out), nodes_[a].requires_grad || nodes_[b].requires_grad, {});
    nodes_[v].tag = "matmul";
    nodes_[v].back = [this, v, a, b] {
        const Matrix& g = nodes_[v].grad;
        if (nodes_[a].requires_grad) gemm_acc(grad_of(a), g, false, value(b), true);
        if (nodes_[b].requires_grad) gemm_acc(grad_of(b), value(a), true, g, false);
    };
    return v;
}

Graph::Var Graph::add_rowvec(Var a, Var bias) {
    const Matrix& va = value(a);
    const Matrix& vb = value(bias);
    if (vb.rows != 1 || vb.cols != va.cols) throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
    Matrix out = va;
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += vb.at(0, c);
    Var v = emit(std::move(out), nodes_[a].requires_grad || nodes_[bias].requires_grad, {});
    nodes_[v].tag = "add_rowvec";
    nodes_[v].back = [this, v, a, bias] {
        const Matrix& g = nodes_[v].grad;
        accumulate(a, g);
        if (nodes_[bias].requires_grad) {
            Matrix& gb = grad_of(bias);
            double* gbp = gb.data.data();
            for (std::size_t r = 0; r < g.rows; ++r) {
                const double* gr = g.row_ptr(r);
                for (std::size_t c = 0; c < g.cols; ++c) gbp[c] += gr[c];
            }
        }
    };
    return v;
}

Graph::Var Graph::affine(Var x, Var w, Var bias, bool rectify) {
    const Matrix& vx = value(x);
    const Matrix& vw = value(w);
    const Matrix& vb = value(bias);
    if (vx.cols != vw.rows || vb.rows != 1 || vb.cols != vw.cols)
        throw std::invalid_argument("affine: shape mismatch");
    Matrix out(vx.rows, vw.cols);
    gemm_acc(out, vx, false, vw, false);
    for (std::size_t r = 0; r < out.rows; ++r) {
        double* o = out.row_ptr(r);
        const double* b = vb.row_ptr(0);
        if (rectify)
            for (std::size_t c = 0; c < out.cols; ++c) o[c] = std::max(0.0, o[c] + b[c]);
        else
            for (std::size_t c = 0; c < out.cols; ++c) o[c] += b[c];
    }
    bool req = nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[bias].requires_grad;
    Var v = emit(std::move(out), req, {});
    nodes_[v].tag = "affine";
    nodes_[v].back = [this, v, x, w, bias, rectify] {
        const Matrix& g = nodes_[v].grad;
        const Matrix& vo = nodes_[v].value;
        const bool rx = nodes_[x].requires_grad;
        const bool rw = nodes_[w].requires_grad;
        const bool rb = nodes_[bias].requires_grad;
        // mask the upstream gradient through the rectifier once
        const Matrix* gp = &g;
        Matrix masked;
        if (rectify) {
            masked = g;
            double* mp = masked.data.data();
            const double* op = vo.data.data();
            for (std::size_t i = 0; i < masked.size(); ++i) mp[i] = op[i] > 0.0 ? mp[i] : 0.0;
            gp = &masked;
        }
        if (rx) gemm_acc(grad_of(x), *gp, false, value(w), true);
        if (rw) gemm_acc(grad_of(w), value(x), true, *gp, false);
        if (rb) {
            Matrix& gb = grad_of(bias);
            double* gbp = gb.data.data();
            for (std::size_t r = 0; r < gp->rows; ++r) {
                const double* gr = gp->row_ptr(r);
                for (std::size_t c = 0; c < gp->cols; ++c) gbp[c] += gr[c];
            }
        }
    };
    return v;
}

Graph::Var Graph::relu(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "relu";
    nodes_[v].back = [this, v, a] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const Matrix& va = value(a);
        double* gp = ga.data.data();
        const double* gg = g.data.data();
        const double* vp = va.data.data();
        // subgradient at 0 defined as 0
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += vp[i] > 0.0 ? gg[i] : 0.0;
    };
    return v;
}

Graph::Var Graph::exp_op(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = std::exp(x);
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "exp_op";
    nodes_[v].back = [this, v, a] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const Matrix& vo = nodes_[v].value;
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vo.data[i];
    };
    return v;
}

Graph::Var Graph::log_op(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = std::log(x);
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "log_op";
    nodes_[v].back = [this, v, a] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const Matrix& va = value(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] / va.data[i];
    };
    return v;
}

Graph::Var Graph::clamp(Var a, double lo, double hi) {
    Matrix out = value(a);
    for (double& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "clamp";
    nodes_[v].back = [this, v, a, lo, hi] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const Matrix& va = value(a);
        double* gp = ga.data.data();
        const double* gg = g.data.data();
        const double* vp = va.data.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            gp[i] += (vp[i] > lo && vp[i] < hi) ? gg[i] : 0.0;
    };
    return v;
}

Graph::Var Graph::slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Matrix& va = value(a);
    if (r0 >= r1 || r1 > va.rows) throw std::invalid_argument("slice_rows: bad range");
    Matrix out(r1 - r0, va.cols);
    std::copy(va.row_ptr(r0), va.row_ptr(r0) + out.size(), out.data.data());
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "slice_rows";
    nodes_[v].back = [this, v, a, r0] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        double* base = ga.row_ptr(r0);
        const double* gp = g.data.data();
        for (std::size_t i = 0; i < g.size(); ++i) base[i] += gp[i];
    };
    return v;
}

Graph::Var Graph::slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Matrix& va = value(a);
    if (c0 >= c1 || c1 > va.cols) throw std::invalid_argument("slice_cols: bad range");
    Matrix out(va.rows, c1 - c0);
    for (std::size_t r = 0; r < va.rows; ++r)
        for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = va.at(r, c);
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "slice_cols";
    nodes_[v].back = [this, v, a, c0] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) ga.at(r, c0 + c) += g.at(r, c);
    };
    return v;
}

Graph::Var Graph::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    std::size_t total = 0;
    const std::size_t cols = value(parts[0]).cols;
    bool req = false;
    for (Var p : parts) {
        if (value(p).cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
        total += value(p).rows;
        req = req || nodes_[p].requires_grad;
    }
    Matrix out(total, cols);
    std::size_t r = 0;
    for (Var p : parts) {
        const Matrix& vp = value(p);
        std::copy(vp.data.begin(), vp.data.end(), out.row_ptr(r));
        r += vp.rows;
    }
    Var v = emit(std::move(out), req, {});
    std::vector<Var> ps = parts;
    nodes_[v].tag = "concat_rows";
    nodes_[v].back = [this, v, ps] {
        const Matrix& g = nodes_[v].grad;
        std::size_t r0 = 0;
        for (Var p : ps) {
            const std::size_t pr = value(p).rows;
            if (nodes_[p].requires_grad) {
                Matrix& gp = grad_of(p);
                for (std::size_t i = 0; i < pr * g.cols; ++i) gp.data[i] += g.data[r0 * g.cols + i];
            }
            r0 += pr;
        }
    };
    return v;
}

Graph::Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const std::size_t rows = value(parts[0]).rows;
    std::size_t total = 0;
    bool req = false;
    for (Var p : parts) {
        if (value(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        total += value(p).cols;
        req = req || nodes_[p].requires_grad;
    }
    Matrix out(rows, total);
    std::size_t c0 = 0;
    for (Var p : parts) {
        const Matrix& vp = value(p);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < vp.cols; ++c) out.at(r, c0 + c) = vp.at(r, c);
        c0 += vp.cols;
    }
    Var v = emit(std::move(out), req, {});
    std::vector<Var> ps = parts;
    nodes_[v].tag = "concat_cols";
    nodes_[v].back = [this, v, ps] {
        const Matrix& g = nodes_[v].grad;
        std::size_t c0 = 0;
        for (Var p : ps) {
            const std::size_t pc = value(p).cols;
            if (nodes_[p].requires_grad) {
                Matrix& gp = grad_of(p);
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t c = 0; c < pc; ++c) gp.at(r, c) += g.at(r, c0 + c);
            }
            c0 += pc;
        }
    };
    return v;
}

Graph::Var Graph::tile_rows(Var a, std::size_t k) {
    const Matrix& va = value(a);
    Matrix out(va.rows * k, va.cols);
    for (std::size_t b = 0; b < k; ++b)
        std::copy(va.data.begin(), va.data.end(), out.row_ptr(b * va.rows));
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "tile_rows";
    nodes_[v].back = [this, v, a, k] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const std::size_t block = ga.data.size();
        for (std::size_t b = 0; b < k; ++b)
            for (std::size_t i = 0; i < block; ++i) ga.data[i] += g.data[b * block + i];
    };
    return v;
}

Graph::Var Graph::shift_rows(Var a, std::size_t s) {
    const Matrix& va = value(a);
    const std::size_t n = va.rows;
    Matrix out(n, va.cols);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = (r + s) % n;
        std::copy(va.row_ptr(src), va.row_ptr(src) + va.cols, out.row_ptr(r));
    }
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "shift_rows";
    nodes_[v].back = [this, v, a, s] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const std::size_t n2 = g.rows;
        for (std::size_t r = 0; r < n2; ++r) {
            const std::size_t src = (r + s) % n2;
            for (std::size_t c = 0; c < g.cols; ++c) ga.at(src, c) += g.at(r, c);
        }
    };
    return v;
}

Graph::Var Graph::rowwise_scale(Var a, std::vector<double> w) {
    const Matrix& va = value(a);
    if (w.size() != va.rows) throw std::invalid_argument("rowwise_scale: weight length mismatch");
    Matrix out = va;
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) *= w[r];
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "rowwise_scale";
    nodes_[v].back = [this, v, a, w = std::move(w)] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) ga.at(r, c) += w[r] * g.at(r, c);
    };
    return v;
}

Graph::Var Graph::rowsum(Var a) {
    const Matrix& va = value(a);
    Matrix out(va.rows, 1);
    for (std::size_t r = 0; r < va.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < va.cols; ++c) acc += va.at(r, c);
        out.at(r, 0) = acc;
    }
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "rowsum";
    nodes_[v].back = [this, v, a] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        for (std::size_t r = 0; r < ga.rows; ++r)
            for (std::size_t c = 0; c < ga.cols; ++c) ga.at(r, c) += g.at(r, 0);
    };
    return v;
}

Graph::Var Graph::sum_all(Var a) {
    const Matrix& va = value(a);
    double acc = 0.0;
    for (double x : va.data) acc += x;
    Matrix out(1, 1);
    out.at(0, 0) = acc;
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "sum_all";
    nodes_[v].back = [this, v, a] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const double g = nodes_[v].grad.at(0, 0);
        for (double& x : ga.data) x += g;
    };
    return v;
}

Graph::Var Graph::logsumexp_cols(Var a) {
    const Matrix& va = value(a);
    Matrix out(va.rows, 1);
    for (std::size_t r = 0; r < va.rows; ++r) {
        double mx = va.at(r, 0);
        for (std::size_t c = 1; c < va.cols; ++c) mx = std::max(mx, va.at(r, c));
        double acc = 0.0;
        for (std::size_t c = 0; c < va.cols; ++c) acc += std::exp(va.at(r, c) - mx);
        out.at(r, 0) = mx + std::log(acc);
    }
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "logsumexp_cols";
    nodes_[v].back = [this, v, a] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const Matrix& va2 = value(a);
        const Matrix& vo = nodes_[v].value;
        for (std::size_t r = 0; r < va2.rows; ++r)
            for (std::size_t c = 0; c < va2.cols; ++c)
                ga.at(r, c) += g.at(r, 0) * std::exp(va2.at(r, c) - vo.at(r, 0));
    };
    return v;
}

Graph::Var Graph::blocks_to_cols(Var a, std::size_t k) {
    const Matrix& va = value(a);
    if (va.cols != 1 || va.rows % k != 0) throw std::invalid_argument("blocks_to_cols: expects (k*n) x 1");
    const std::size_t n = va.rows / k;
    Matrix out(n, k);
    for (std::size_t b = 0; b < k; ++b)
        for (std::size_t r = 0; r < n; ++r) out.at(r, b) = va.at(b * n + r, 0);
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "blocks_to_cols";
    nodes_[v].back = [this, v, a, k] {
        if (!nodes_[a].requires_grad) return;
        Matrix& ga = grad_of(a);
        const Matrix& g = nodes_[v].grad;
        const std::size_t n2 = g.rows;
        for (std::size_t b = 0; b < k; ++b)
            for (std::size_t r = 0; r < n2; ++r) ga.at(b * n2 + r, 0) += g.at(r, b);
    };
    return v;
}

Graph::Var Graph::reparam(Var mean, Var logvar, Var noise) {
    const Matrix& vm = value(mean);
    const Matrix& vl = value(logvar);
    const Matrix& ve = value(noise);
    if (!vm.same_shape(vl) || !vm.same_shape(ve)) throw std::invalid_argument("reparam: shape mismatch");
    Matrix out(vm.rows, vm.cols);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = vm.data[i] + std::exp(0.5 * vl.data[i]) * ve.data[i];
    Var v = emit(std::move(out), nodes_[mean].requires_grad || nodes_[logvar].requires_grad, {});
    nodes_[v].tag = "reparam";
    nodes_[v].back = [this, v, mean, logvar] {
        const Matrix& g = nodes_[v].grad;
        if (nodes_[mean].requires_grad) accumulate(mean, g);
        if (nodes_[logvar].requires_grad) {
            Matrix& gl = grad_of(logvar);
            const Matrix& vo = nodes_[v].value;
            const Matrix& vm2 = value(mean);
            // dz/dlogvar = (z - mean) / 2
            for (std::size_t i = 0; i < g.size(); ++i)
                gl.data[i] += g.data[i] * 0.5 * (vo.data[i] - vm2.data[i]);
        }
    };
    return v;
}

Graph::Var Graph::gauss_logprob(Var z, Var mean, Var logvar) {
    constexpr double kLog2Pi = 1.8378770664093453;
    const Matrix& vz = value(z);
    const Matrix& vm = value(mean);
    const Matrix& vl = value(logvar);
    if (!vz.same_shape(vm) || !vz.same_shape(vl)) throw std::invalid_argument("gauss_logprob: shape mismatch");
    // cache the precisions for the backward pass
    auto inv_var = std::make_shared<Matrix>(vl);
    for (double& x : inv_var->data) x = std::exp(-x);
    Matrix out(vz.rows, 1);
    for (std::size_t r = 0; r < vz.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < vz.cols; ++c) {
            const double d = vz.at(r, c) - vm.at(r, c);
            acc += -0.5 * (d * d * inv_var->at(r, c) + vl.at(r, c) + kLog2Pi);
        }
        out.at(r, 0) = acc;
    }
    bool req = nodes_[z].requires_grad || nodes_[mean].requires_grad || nodes_[logvar].requires_grad;
    Var v = emit(std::move(out), req, {});
    nodes_[v].tag = "gauss_logprob";
    nodes_[v].back = [this, v, z, mean, logvar, inv_var] {
        const Matrix& g = nodes_[v].grad;
        const Matrix& vz2 = value(z);
        const Matrix& vm2 = value(mean);
        const bool rz = nodes_[z].requires_grad;
        const bool rm = nodes_[mean].requires_grad;
        const bool rl = nodes_[logvar].requires_grad;
        Matrix* gz = rz ? &grad_of(z) : nullptr;
        Matrix* gm = rm ? &grad_of(mean) : nullptr;
        Matrix* gl = rl ? &grad_of(logvar) : nullptr;
        for (std::size_t r = 0; r < vz2.rows; ++r) {
            const double gr = g.at(r, 0);
            for (std::size_t c = 0; c < vz2.cols; ++c) {
                const double d = vz2.at(r, c) - vm2.at(r, c);
                const double dep = d * inv_var->at(r, c);
                if (rz) gz->at(r, c) -= gr * dep;
                if (rm) gm->at(r, c) += gr * dep;
                if (rl) gl->at(r, c) += gr * 0.5 * (dep * d - 1.0);
            }
        }
    };
    return v;
}

Graph::Var Graph::sqerr_rowsum(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("sqerr_rowsum: shape mismatch");
    Matrix out(va.rows, 1);
    for (std::size_t r = 0; r < va.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < va.cols; ++c) {
            const double d = va.at(r, c) - vb.at(r, c);
            acc += d * d;
        }
        out.at(r, 0) = acc;
    }
    Var v = emit(std::move(out), nodes_[a].requires_grad || nodes_[b].requires_grad, {});
    nodes_[v].tag = "sqerr_rowsum";
    nodes_[v].back = [this, v, a, b] {
        const Matrix& g = nodes_[v].grad;
        const Matrix& va2 = value(a);
        const Matrix& vb2 = value(b);
        const bool ra = nodes_[a].requires_grad;
        const bool rb = nodes_[b].requires_grad;
        Matrix* ga = ra ? &grad_of(a) : nullptr;
        Matrix* gb = rb ? &grad_of(b) : nullptr;
        for (std::size_t r = 0; r < va2.rows; ++r) {
            const double gr = g.at(r, 0);
            for (std::size_t c = 0; c < va2.cols; ++c) {
                const double d = 2.0 * (va2.at(r, c) - vb2.at(r, c));
                if (ra) ga->at(r, c) += gr * d;
                if (rb) gb->at(r, c) -= gr * d;
            }
        }
    };
    return v;
}

Graph::Var Graph::kl_std_rowsum(Var mean, Var logvar) {
    const Matrix& vm = value(mean);
    const Matrix& vl = value(logvar);
    if (!vm.same_shape(vl)) throw std::invalid_argument("kl_std_rowsum: shape mismatch");
    Matrix out(vm.rows, 1);
    for (std::size_t r = 0; r < vm.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < vm.cols; ++c) {
            const double mu = vm.at(r, c);
            const double lv = vl.at(r, c);
            acc += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
        }
        out.at(r, 0) = acc;
    }
    Var v = emit(std::move(out), nodes_[mean].requires_grad || nodes_[logvar].requires_grad, {});
    nodes_[v].tag = "kl_std_rowsum";
    nodes_[v].back = [this, v, mean, logvar] {
        const Matrix& g = nodes_[v].grad;
        const Matrix& vm2 = value(mean);
        const Matrix& vl2 = value(logvar);
        const bool rm = nodes_[mean].requires_grad;
        const bool rl = nodes_[logvar].requires_grad;
        Matrix* gm = rm ? &grad_of(mean) : nullptr;
        Matrix* gl = rl ? &grad_of(logvar) : nullptr;
        for (std::size_t r = 0; r < vm2.rows; ++r) {
            const double gr = g.at(r, 0);
            for (std::size_t c = 0; c < vm2.cols; ++c) {
                if (rm) gm->at(r, c) += gr * vm2.at(r, c);
                if (rl) gl->at(r, c) += gr * 0.5 * (std::exp(vl2.at(r, c)) - 1.0);
            }
        }
    };
    return v;
}

Graph::Var Graph::mixture_sample(const std::vector<Var>& means, const std::vector<Var>& logvars,
                                 std::vector<std::size_t> choice, Var noise) {
    if (means.empty() || means.size() != logvars.size())
        throw std::invalid_argument("mixture_sample: component lists must align");
    const std::size_t n = value(means[0]).rows;
    const std::size_t d = value(means[0]).cols;
    for (std::size_t c = 0; c < means.size(); ++c)
        if (value(means[c]).rows != n || value(means[c]).cols != d || !value(means[c]).same_shape(value(logvars[c])))
            throw std::invalid_argument("mixture_sample: component shape mismatch");
    const Matrix& eps = value(noise);
    if (eps.cols != d || eps.rows != choice.size() || eps.rows % n != 0)
        throw std::invalid_argument("mixture_sample: noise/choice shape mismatch");

    // component scales depend only on the n source rows, not on the k draws
    std::vector<Matrix> sigma;
    sigma.reserve(means.size());
    for (std::size_t c = 0; c < means.size(); ++c) {
        Matrix s = value(logvars[c]);
        for (double& x : s.data) x = std::exp(0.5 * x);
        sigma.push_back(std::move(s));
    }
    Matrix out(eps.rows, d);
    for (std::size_t i = 0; i < eps.rows; ++i) {
        const std::size_t c = choice[i];
        const std::size_t src = i % n;
        const double* mu = value(means[c]).row_ptr(src);
        const double* sg = sigma[c].row_ptr(src);
        const double* e = eps.row_ptr(i);
        double* o = out.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = mu[j] + sg[j] * e[j];
    }
    bool req = false;
    for (std::size_t c = 0; c < means.size(); ++c)
        req = req || nodes_[means[c]].requires_grad || nodes_[logvars[c]].requires_grad;
    Var v = emit(std::move(out), req, {});
    std::vector<Var> ms = means, ls = logvars;
    nodes_[v].tag = "mixture_sample";
    nodes_[v].back = [this, v, ms, ls, choice = std::move(choice), n] {
        const Matrix& g = nodes_[v].grad;
        const Matrix& vo = nodes_[v].value;
        for (std::size_t i = 0; i < g.rows; ++i) {
            const std::size_t c = choice[i];
            const std::size_t src = i % n;
            const bool rm = nodes_[ms[c]].requires_grad;
            const bool rl = nodes_[ls[c]].requires_grad;
            if (!rm && !rl) continue;
            const double* gi = g.row_ptr(i);
            const double* oi = vo.row_ptr(i);
            const double* mu = value(ms[c]).row_ptr(src);
            double* gm = rm ? grad_of(ms[c]).row_ptr(src) : nullptr;
            double* gl = rl ? grad_of(ls[c]).row_ptr(src) : nullptr;
            for (std::size_t j = 0; j < g.cols; ++j) {
                if (rm) gm[j] += gi[j];
                if (rl) gl[j] += gi[j] * 0.5 * (oi[j] - mu[j]);
            }
        }
    };
    return v;
}

Graph::Var Graph::mixture_logprob(Var z, const std::vector<Var>& means, const std::vector<Var>& logvars) {
    constexpr double kLog2Pi = 1.8378770664093453;
    if (means.empty() || means.size() != logvars.size())
        throw std::invalid_argument("mixture_logprob: component lists must align");
    const Matrix& vz = value(z);
    const std::size_t n = value(means[0]).rows;
    const std::size_t d = value(means[0]).cols;
    if (vz.cols != d || vz.rows % n != 0) throw std::invalid_argument("mixture_logprob: shape mismatch");
    const std::size_t n_comp = means.size();

    // Per-component precisions and log-det constants depend only on the n
    // source rows; cache them once instead of exponentiating per draw. The
    // per-component log densities are kept for the backward softmax weights.
    auto inv_var = std::make_shared<std::vector<Matrix>>();
    std::vector<std::vector<double>> lv_const(n_comp, std::vector<double>(n, 0.0));
    for (std::size_t c = 0; c < n_comp; ++c) {
        Matrix iv = value(logvars[c]);
        for (std::size_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                acc += iv.at(r, j) + kLog2Pi;
                iv.at(r, j) = std::exp(-iv.at(r, j));
            }
            lv_const[c][r] = acc;
        }
        inv_var->push_back(std::move(iv));
    }
    auto lp = std::make_shared<Matrix>(vz.rows, n_comp);
    Matrix out(vz.rows, 1);
    const double log_c = std::log(static_cast<double>(n_comp));
    for (std::size_t i = 0; i < vz.rows; ++i) {
        const std::size_t src = i % n;
        const double* zi = vz.row_ptr(i);
        for (std::size_t c = 0; c < n_comp; ++c) {
            const double* mu = value(means[c]).row_ptr(src);
            const double* iv = (*inv_var)[c].row_ptr(src);
            double quad = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = zi[j] - mu[j];
                quad += diff * diff * iv[j];
            }
            lp->at(i, c) = -0.5 * (quad + lv_const[c][src]);
        }
        double mx = lp->at(i, 0);
        for (std::size_t c = 1; c < n_comp; ++c) mx = std::max(mx, lp->at(i, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < n_comp; ++c) sum += std::exp(lp->at(i, c) - mx);
        out.at(i, 0) = mx + std::log(sum) - log_c;
    }
    bool req = nodes_[z].requires_grad;
    for (std::size_t c = 0; c < n_comp; ++c)
        req = req || nodes_[means[c]].requires_grad || nodes_[logvars[c]].requires_grad;
    Var v = emit(std::move(out), req, {});
    std::vector<Var> ms = means, ls = logvars;
    nodes_[v].tag = "mixture_logprob";
    nodes_[v].back = [this, v, z, ms, ls, lp, inv_var, n, log_c] {
        const Matrix& g = nodes_[v].grad;
        const Matrix& vo = nodes_[v].value;
        const Matrix& vz2 = value(z);
        const std::size_t d2 = vz2.cols;
        const bool rz = nodes_[z].requires_grad;
        double* gz_base = rz ? grad_of(z).data.data() : nullptr;
        for (std::size_t i = 0; i < vz2.rows; ++i) {
            const double gi = g.at(i, 0);
            if (gi == 0.0) continue;
            const std::size_t src = i % n;
            const double* zi = vz2.row_ptr(i);
            double* gz = rz ? gz_base + i * d2 : nullptr;
            for (std::size_t c = 0; c < ms.size(); ++c) {
                // responsibility of component c for row i
                const double w = std::exp(lp->at(i, c) - (vo.at(i, 0) + log_c));
                if (w == 0.0) continue;
                const bool rm = nodes_[ms[c]].requires_grad;
                const bool rl = nodes_[ls[c]].requires_grad;
                if (!rm && !rl && !rz) continue;
                const double* mu = value(ms[c]).row_ptr(src);
                const double* iv = (*inv_var)[c].row_ptr(src);
                double* gm = rm ? grad_of(ms[c]).row_ptr(src) : nullptr;
                double* gl = rl ? grad_of(ls[c]).row_ptr(src) : nullptr;
                const double giw = gi * w;
                for (std::size_t j = 0; j < d2; ++j) {
                    const double diff_iv = (zi[j] - mu[j]) * iv[j];
                    if (rz) gz[j] -= giw * diff_iv;
                    if (rm) gm[j] += giw * diff_iv;
                    if (rl) gl[j] += giw * 0.5 * (diff_iv * (zi[j] - mu[j]) - 1.0);
                }
            }
        }
    };
    return v;
}

Graph::Var Graph::sqerr_rowsum_shifted(Var a, Matrix x, std::size_t shift) {
    const Matrix& va = value(a);
    const std::size_t n = x.rows;
    if (va.cols != x.cols || n == 0 || va.rows % n != 0)
        throw std::invalid_argument("sqerr_rowsum_shifted: shape mismatch");
    Matrix out(va.rows, 1);
    for (std::size_t i = 0; i < va.rows; ++i) {
        const double* ai = va.row_ptr(i);
        const double* xi = x.row_ptr((i % n + shift) % n);
        double acc = 0.0;
        for (std::size_t j = 0; j < va.cols; ++j) {
            const double d = ai[j] - xi[j];
            acc += d * d;
        }
        out.at(i, 0) = acc;
    }
    Var v = emit(std::move(out), nodes_[a].requires_grad, {});
    nodes_[v].tag = "sqerr_rowsum_shifted";
    nodes_[v].back = [this, v, a, x = std::move(x), shift] {
        if (!nodes_[a].requires_grad) return;
        const Matrix& g = nodes_[v].grad;
        const Matrix& va2 = value(a);
        Matrix& ga = grad_of(a);
        const std::size_t n2 = x.rows;
        for (std::size_t i = 0; i < va2.rows; ++i) {
            const double gi = 2.0 * g.at(i, 0);
            if (gi == 0.0) continue;
            const double* ai = va2.row_ptr(i);
            const double* xi = x.row_ptr((i % n2 + shift) % n2);
            double* gi_row = ga.row_ptr(i);
            for (std::size_t j = 0; j < va2.cols; ++j) gi_row[j] += gi * (ai[j] - xi[j]);
        }
    };
    return v;
}

double Graph::scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.rows != 1 || m.cols != 1) throw std::invalid_argument("scalar: node is not 1x1");
    return m.at(0, 0);
}

#ifdef BRAVL_PROFILE_BACKWARD
std::map<std::string, double>& bravl_back_prof() { static std::map<std::string, double> m; return m; }
void bravl_back_prof_dump() {
    for (auto& [k, v] : bravl_back_prof()) std::printf("  back %-24s %.1f ms\n", k.c_str(), v);
    bravl_back_prof().clear();
}
#endif

void Graph::backward(Var root, double seed) {
    const Matrix& rv = value(root);
    if (rv.rows != 1 || rv.cols != 1) throw std::invalid_argument("backward: root must be a scalar");
    for (Node& n : nodes_) n.grad = Matrix();
    grad_of(root).at(0, 0) = seed;
    for (std::int32_t i = root; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad && !n.sink) continue;
        if (n.grad.empty() || !n.back) continue;
#ifdef BRAVL_PROFILE_BACKWARD
        auto t0 = std::chrono::steady_clock::now();
        n.back();
        auto t1 = std::chrono::steady_clock::now();
        bravl_back_prof()[n.tag ? n.tag : "?"] +=
            std::chrono::duration<double, std::milli>(t1 - t0).count();
#else
        n.back();
#endif
    }
}

} // namespace bravl
