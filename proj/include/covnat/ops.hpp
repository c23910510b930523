#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "covnat/random.hpp"
#include "covnat/tensor.hpp"

namespace covnat {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline Tensor make_op(const char* name, Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->op = name;
    bool need = false;
    if (autograd::enabled()) {
        for (const auto& t : inputs)
            if (t.node()->requires_grad) need = true;
    }
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const auto& t : inputs) n->parents.push_back(t.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline Index last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op("add", a.shape(), std::move(out), {a, b}, [an, bn](Node& o) {
        if (an->requires_grad) an->accumulate_grad(o.grad);
        if (bn->requires_grad) bn->accumulate_grad(o.grad);
    });
}

// y = mul * x + shift, elementwise with scalar constants.
inline Tensor affine_scalar(const Tensor& x, double mul, double shift) {
    std::vector<double> out(x.values());
    for (double& v : out) v = mul * v + shift;
    auto xn = x.node();
    return detail::make_op("affine_scalar", x.shape(), std::move(out), {x}, [xn, mul](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += mul * o.grad[i];
    });
}

inline Tensor scale_by_scalar(const Tensor& x, double c) { return affine_scalar(x, c, 0.0); }
inline Tensor one_minus(const Tensor& x) { return affine_scalar(x, -1.0, 1.0); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale_by_scalar(b, -1.0)); }

inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("elementwise_mul", a, b);
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op("elementwise_mul", a.shape(), std::move(out), {a, b}, [an, bn](Node& o) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bn->values[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * an->values[i];
        }
    });
}

// y = s * x where s is a trainable scalar tensor of shape (1).
inline Tensor scalar_mul(const Tensor& s, const Tensor& x) {
    if (s.numel() != 1) throw ShapeError("scalar_mul: scale must have one element");
    const double sv = s.at(0);
    std::vector<double> out(x.values());
    for (double& v : out) v *= sv;
    auto sn = s.node();
    auto xn = x.node();
    return detail::make_op("scalar_mul", x.shape(), std::move(out), {s, x}, [sn, xn, sv](Node& o) {
        if (sn->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * xn->values[i];
            sn->grad_buffer()[0] += acc;
        }
        if (xn->requires_grad) {
            auto& g = xn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sv * o.grad[i];
        }
    });
}

// Adds a row vector (shape D) to every row of x (shape ...xD).
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
    const Index d = detail::last_dim(x);
    if (b.rank() != 1 || b.size(0) != d)
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match last dim of " +
                         shape_str(x.shape()));
    std::vector<double> out(x.values());
    const auto& bv = b.values();
    const std::size_t dd = static_cast<std::size_t>(d);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % dd];
    auto xn = x.node();
    auto bn = b.node();
    return detail::make_op("add_bias", x.shape(), std::move(out), {x, b}, [xn, bn, dd](Node& o) {
        if (xn->requires_grad) xn->accumulate_grad(o.grad);
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % dd] += o.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

// Standard matrix product. Rank-2, or rank-3 with equal leading batch extent.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    auto fail = [&] {
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
    };
    if (sa.size() < 2 || sa.size() != sb.size() || sa.size() > 3) fail();
    if (sa.back() != sb[sb.size() - 2]) fail();
    const Index batch = sa.size() == 3 ? sa[0] : 1;
    if (sa.size() == 3 && sa[0] != sb[0]) fail();
    const Index m = sa[sa.size() - 2], k = sa.back(), n = sb.back();

    Shape out_shape = sa;
    out_shape.back() = n;
    std::vector<double> out(static_cast<std::size_t>(batch * m * n));
    for (Index bi = 0; bi < batch; ++bi) {
        detail::ECMap ma(a.values().data() + bi * m * k, m, k);
        detail::ECMap mb(b.values().data() + bi * k * n, k, n);
        detail::EMap(out.data() + bi * m * n, m, n).noalias() = ma * mb;
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                           [an, bn, batch, m, k, n](Node& o) {
                               for (Index bi = 0; bi < batch; ++bi) {
                                   detail::ECMap go(o.grad.data() + bi * m * n, m, n);
                                   if (an->requires_grad) {
                                       detail::ECMap mb(bn->values.data() + bi * k * n, k, n);
                                       detail::EMap(an->grad_buffer().data() + bi * m * k, m, k)
                                           .noalias() += go * mb.transpose();
                                   }
                                   if (bn->requires_grad) {
                                       detail::ECMap ma(an->values.data() + bi * m * k, m, k);
                                       detail::EMap(bn->grad_buffer().data() + bi * k * n, k, n)
                                           .noalias() += ma.transpose() * go;
                                   }
                               }
                           });
}

// Matrix product evaluated row by row with a fixed per-element accumulation
// order, so permuting the rows of `a` permutes the output rows bit-exactly.
// The blocked kernel behind matmul does not guarantee that for tail rows.
inline Tensor matmul_rowwise(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0))
        throw ShapeError("matmul_rowwise: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const Index m = a.size(0), k = a.size(1), n = b.size(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    for (Index i = 0; i < m; ++i)
        for (Index t = 0; t < k; ++t) {
            const double av = a.values()[static_cast<std::size_t>(i * k + t)];
            const double* br = b.values().data() + t * n;
            double* cr = out.data() + i * n;
            for (Index j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op("matmul_rowwise", {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& o) {
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (Index i = 0; i < m; ++i)
                for (Index t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (Index j = 0; j < n; ++j)
                        acc += o.grad[static_cast<std::size_t>(i * n + j)] *
                               bn->values[static_cast<std::size_t>(t * n + j)];
                    g[static_cast<std::size_t>(i * k + t)] += acc;
                }
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (Index t = 0; t < k; ++t)
                for (Index i = 0; i < m; ++i) {
                    const double av = an->values[static_cast<std::size_t>(i * k + t)];
                    for (Index j = 0; j < n; ++j)
                        g[static_cast<std::size_t>(t * n + j)] +=
                            av * o.grad[static_cast<std::size_t>(i * n + j)];
                }
        }
    });
}

inline Tensor transpose_last_two(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose_last_two: expected rank 2, got " + shape_str(x.shape()));
    const Index r = x.size(0), c = x.size(1);
    std::vector<double> out(x.values().size());
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j * r + i)] = x.values()[static_cast<std::size_t>(i * c + j)];
    auto xn = x.node();
    return detail::make_op("transpose_last_two", {c, r}, std::move(out), {x}, [xn, r, c](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j)
                g[static_cast<std::size_t>(i * c + j)] += o.grad[static_cast<std::size_t>(j * r + i)];
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    auto xn = x.node();
    return detail::make_op("relu", x.shape(), std::move(out), {x}, [xn](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->values[i] > 0.0) g[i] += o.grad[i];
    });
}

// y = min(x, 1). Subgradient is 0 at the boundary x = 1.
inline Tensor min_clamp1(const Tensor& x) {
    std::vector<double> out(x.values());
    for (double& v : out) v = v < 1.0 ? v : 1.0;
    auto xn = x.node();
    return detail::make_op("min_clamp1", x.shape(), std::move(out), {x}, [xn](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->values[i] < 1.0) g[i] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_row(const double* x, double* y, Index d) {
    double mx = x[0];
    for (Index j = 0; j < d; ++j) {
        if (std::isnan(x[j])) throw NumericError("softmax: NaN in input");
        mx = std::max(mx, x[j]);
    }
    double sum = 0.0;
    for (Index j = 0; j < d; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    for (Index j = 0; j < d; ++j) y[j] /= sum;
}

inline void softmax_backward_row(const double* y, const double* dy, double* dx, Index d) {
    double dot = 0.0;
    for (Index j = 0; j < d; ++j) dot += dy[j] * y[j];
    for (Index j = 0; j < d; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace detail

inline Tensor softmax_lastdim(const Tensor& x) {
    const Index d = detail::last_dim(x);
    if (d < 1) throw ShapeError("softmax_lastdim: empty last dimension");
    const Index rows = x.numel() / d;
    std::vector<double> out(x.values().size());
    for (Index r = 0; r < rows; ++r)
        detail::softmax_row(x.values().data() + r * d, out.data() + r * d, d);
    auto xn = x.node();
    auto on = std::make_shared<std::vector<double>>(out);
    return detail::make_op("softmax_lastdim", x.shape(), std::move(out), {x}, [xn, on, rows, d](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (Index r = 0; r < rows; ++r)
            detail::softmax_backward_row(on->data() + r * d, o.grad.data() + r * d, g.data() + r * d, d);
    });
}

// Softmax over the unmasked entries of each row; masked entries are exactly 0
// in the output and receive exactly 0 gradient. `mask` is a constant 0/1
// tensor, either shape (D) shared by all rows or the same shape as x.
inline Tensor masked_softmax_lastdim(const Tensor& x, const Tensor& mask) {
    const Index d = detail::last_dim(x);
    const Index rows = x.numel() / d;
    const bool per_row = mask.numel() != d;
    if (per_row && mask.shape() != x.shape())
        throw ShapeError("masked_softmax_lastdim: mask " + shape_str(mask.shape()) +
                         " matches neither last dim nor full shape of " + shape_str(x.shape()));
    std::vector<double> out(x.values().size(), 0.0);
    const auto& mv = mask.values();
    for (Index r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * d;
        const double* mr = mv.data() + (per_row ? r * d : 0);
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < d; ++j) {
            if (mr[j] > 0.5) {
                if (std::isnan(xr[j])) throw NumericError("masked_softmax_lastdim: NaN in input");
                mx = std::max(mx, xr[j]);
            }
        }
        if (mx == -std::numeric_limits<double>::infinity())
            throw ContractError("masked_softmax_lastdim: row " + std::to_string(r) + " fully masked");
        double sum = 0.0;
        double* yr = out.data() + r * d;
        for (Index j = 0; j < d; ++j) {
            if (mr[j] > 0.5) {
                yr[j] = std::exp(xr[j] - mx);
                sum += yr[j];
            }
        }
        for (Index j = 0; j < d; ++j)
            if (mr[j] > 0.5) yr[j] /= sum;
    }
    auto xn = x.node();
    auto mn = mask.node();
    auto on = std::make_shared<std::vector<double>>(out);
    return detail::make_op(
        "masked_softmax_lastdim", x.shape(), std::move(out), {x, mask},
        [xn, mn, on, rows, d, per_row](Node& o) {
            if (!xn->requires_grad) return;
            auto& g = xn->grad_buffer();
            for (Index r = 0; r < rows; ++r) {
                const double* yr = on->data() + r * d;
                const double* mr = mn->values.data() + (per_row ? r * d : 0);
                const double* dyr = o.grad.data() + r * d;
                double dot = 0.0;
                for (Index j = 0; j < d; ++j)
                    if (mr[j] > 0.5) dot += dyr[j] * yr[j];
                double* gr = g.data() + r * d;
                for (Index j = 0; j < d; ++j)
                    if (mr[j] > 0.5) gr[j] += yr[j] * (dyr[j] - dot);
            }
        });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    constexpr double kEps = 1e-5;
    const Index d = detail::last_dim(x);
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias must have extent " + std::to_string(d));
    const Index rows = x.numel() / d;
    std::vector<double> out(x.values().size());
    std::vector<double> xhat(x.values().size());
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    for (Index r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * d;
        double mean = 0.0;
        for (Index j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (Index j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std[static_cast<std::size_t>(r)] = inv;
        for (Index j = 0; j < d; ++j) {
            const double h = (xr[j] - mean) * inv;
            xhat[static_cast<std::size_t>(r * d + j)] = h;
            out[static_cast<std::size_t>(r * d + j)] = gv[static_cast<std::size_t>(j)] * h +
                                                        bv[static_cast<std::size_t>(j)];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto saved_xhat = std::make_shared<std::vector<double>>(std::move(xhat));
    auto saved_inv = std::make_shared<std::vector<double>>(std::move(inv_std));
    return detail::make_op(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, saved_xhat, saved_inv, rows, d](Node& o) {
            const double dd = static_cast<double>(d);
            for (Index r = 0; r < rows; ++r) {
                const double* hr = saved_xhat->data() + r * d;
                const double* dyr = o.grad.data() + r * d;
                if (gn->requires_grad) {
                    auto& gg = gn->grad_buffer();
                    for (Index j = 0; j < d; ++j) gg[static_cast<std::size_t>(j)] += dyr[j] * hr[j];
                }
                if (bn->requires_grad) {
                    auto& gb = bn->grad_buffer();
                    for (Index j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += dyr[j];
                }
                if (xn->requires_grad) {
                    const double inv = (*saved_inv)[static_cast<std::size_t>(r)];
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (Index j = 0; j < d; ++j) {
                        const double dh = dyr[j] * gn->values[static_cast<std::size_t>(j)];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    auto& gx = xn->grad_buffer();
                    double* gxr = gx.data() + r * d;
                    for (Index j = 0; j < d; ++j) {
                        const double dh = dyr[j] * gn->values[static_cast<std::size_t>(j)];
                        gxr[j] += inv * (dh - (sum_dh + hr[j] * sum_dh_h) / dd);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

// Mean along one axis. Addends are summed in sorted order so the result is
// invariant to any permutation along the reduced axis.
inline Tensor mean_over_axis(const Tensor& x, Index axis) {
    const auto& s = x.shape();
    if (axis < 0 || axis >= x.rank()) throw ShapeError("mean_over_axis: axis out of range");
    const Index k = s[static_cast<std::size_t>(axis)];
    Index outer = 1, inner = 1;
    for (Index i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (Index i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<std::size_t>(i)];
    Shape out_shape;
    for (Index i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(s[static_cast<std::size_t>(i)]);
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<double> out(static_cast<std::size_t>(outer * inner));
    std::vector<double> addends(static_cast<std::size_t>(k));
    for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
            for (Index j = 0; j < k; ++j)
                addends[static_cast<std::size_t>(j)] =
                    x.values()[static_cast<std::size_t>((o * k + j) * inner + i)];
            std::sort(addends.begin(), addends.end());
            double sum = 0.0;
            for (double v : addends) sum += v;
            out[static_cast<std::size_t>(o * inner + i)] = sum / static_cast<double>(k);
        }
    }
    auto xn = x.node();
    return detail::make_op("mean_over_axis", std::move(out_shape), std::move(out), {x},
                           [xn, outer, inner, k](Node& o) {
                               if (!xn->requires_grad) return;
                               auto& g = xn->grad_buffer();
                               const double scale = 1.0 / static_cast<double>(k);
                               for (Index ot = 0; ot < outer; ++ot)
                                   for (Index j = 0; j < k; ++j)
                                       for (Index i = 0; i < inner; ++i)
                                           g[static_cast<std::size_t>((ot * k + j) * inner + i)] +=
                                               scale * o.grad[static_cast<std::size_t>(ot * inner + i)];
                           });
}

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto xn = x.node();
    return detail::make_op("sum_all", {1}, {s}, {x}, [xn](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (double& v : g) v += o.grad[0];
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, Index axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& s0 = parts[0].shape();
    if (axis < 0 || axis >= parts[0].rank()) throw ShapeError("concat: axis out of range");
    Index cat_extent = 0;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
        for (Index i = 0; i < p.rank(); ++i)
            if (i != axis && p.shape()[static_cast<std::size_t>(i)] != s0[static_cast<std::size_t>(i)])
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
        cat_extent += p.shape()[static_cast<std::size_t>(axis)];
    }
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = cat_extent;
    Index outer = 1, inner = 1;
    for (Index i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
    for (Index i = axis + 1; i < parts[0].rank(); ++i) inner *= s0[static_cast<std::size_t>(i)];

    std::vector<double> out(static_cast<std::size_t>(outer * cat_extent * inner));
    std::vector<Index> extents;
    for (const auto& p : parts) extents.push_back(p.shape()[static_cast<std::size_t>(axis)]);
    Index offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Index e = extents[pi];
        for (Index o = 0; o < outer; ++o)
            std::copy_n(parts[pi].values().data() + o * e * inner, e * inner,
                        out.data() + (o * cat_extent + offset) * inner);
        offset += e;
    }
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_op("concat", std::move(out_shape), std::move(out), parts,
                           [nodes, extents, outer, inner, cat_extent](Node& o) {
                               Index off = 0;
                               for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                                   const Index e = extents[pi];
                                   if (nodes[pi]->requires_grad) {
                                       auto& g = nodes[pi]->grad_buffer();
                                       for (Index ot = 0; ot < outer; ++ot) {
                                           const double* src = o.grad.data() + (ot * cat_extent + off) * inner;
                                           double* dst = g.data() + ot * e * inner;
                                           for (Index t = 0; t < e * inner; ++t) dst[t] += src[t];
                                       }
                                   }
                                   off += e;
                               }
                           });
}

inline Tensor row_slice(const Tensor& x, Index r0, Index r1) {
    if (x.rank() != 2 || r0 < 0 || r1 > x.size(0) || r0 >= r1)
        throw ShapeError("row_slice: invalid range on " + shape_str(x.shape()));
    const Index c = x.size(1);
    std::vector<double> out(x.values().begin() + r0 * c, x.values().begin() + r1 * c);
    auto xn = x.node();
    return detail::make_op("row_slice", {r1 - r0, c}, std::move(out), {x}, [xn, r0, c](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            g[static_cast<std::size_t>(r0 * c) + i] += o.grad[i];
    });
}

inline Tensor col_slice(const Tensor& x, Index c0, Index c1) {
    if (x.rank() != 2 || c0 < 0 || c1 > x.size(1) || c0 >= c1)
        throw ShapeError("col_slice: invalid range on " + shape_str(x.shape()));
    const Index r = x.size(0), c = x.size(1), w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(r * w));
    for (Index i = 0; i < r; ++i)
        std::copy_n(x.values().data() + i * c + c0, w, out.data() + i * w);
    auto xn = x.node();
    return detail::make_op("col_slice", {r, w}, std::move(out), {x}, [xn, r, c, c0, w](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < w; ++j)
                g[static_cast<std::size_t>(i * c + c0 + j)] += o.grad[static_cast<std::size_t>(i * w + j)];
    });
}

// ---------------------------------------------------------------------------
// Embeddings and losses
// ---------------------------------------------------------------------------

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
    const Index v = table.size(0), d = table.size(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                                    " out of vocabulary range [0," + std::to_string(v) + ")");
    const Index n = static_cast<Index>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(n * d));
    for (Index i = 0; i < n; ++i)
        std::copy_n(table.values().data() + static_cast<Index>(ids[static_cast<std::size_t>(i)]) * d, d,
                    out.data() + i * d);
    auto tn = table.node();
    auto saved_ids = std::make_shared<std::vector<int>>(ids);
    return detail::make_op("embedding_lookup", {n, d}, std::move(out), {table},
                           [tn, saved_ids, d](Node& o) {
                               if (!tn->requires_grad) return;
                               auto& g = tn->grad_buffer();
                               for (std::size_t i = 0; i < saved_ids->size(); ++i) {
                                   double* dst = g.data() + static_cast<Index>((*saved_ids)[i]) * d;
                                   const double* src = o.grad.data() + static_cast<Index>(i) * d;
                                   for (Index j = 0; j < d; ++j) dst[j] += src[j];
                               }
                           });
}

// Sum over rows of -log softmax(logits)[target]. Mean variant below.
inline Tensor cross_entropy_sum_from_logits(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be rank 2");
    const Index r = logits.size(0), v = logits.size(1);
    if (static_cast<Index>(targets.size()) != r)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(r) + " rows");
    for (int t : targets)
        if (t < 0 || t >= v)
            throw std::out_of_range("cross_entropy: target id " + std::to_string(t) +
                                    " out of range [0," + std::to_string(v) + ")");
    std::vector<double> probs(logits.values().size());
    double total = 0.0;
    for (Index i = 0; i < r; ++i) {
        const double* xr = logits.values().data() + i * v;
        double* pr = probs.data() + i * v;
        detail::softmax_row(xr, pr, v);
        total -= std::log(pr[targets[static_cast<std::size_t>(i)]]);
    }
    auto ln = logits.node();
    auto saved_probs = std::make_shared<std::vector<double>>(std::move(probs));
    auto saved_t = std::make_shared<std::vector<int>>(targets);
    return detail::make_op("cross_entropy_sum", {1}, {total}, {logits},
                           [ln, saved_probs, saved_t, r, v](Node& o) {
                               if (!ln->requires_grad) return;
                               auto& g = ln->grad_buffer();
                               const double go = o.grad[0];
                               for (Index i = 0; i < r; ++i) {
                                   const double* pr = saved_probs->data() + i * v;
                                   double* gr = g.data() + i * v;
                                   const int t = (*saved_t)[static_cast<std::size_t>(i)];
                                   for (Index j = 0; j < v; ++j) gr[j] += go * pr[j];
                                   gr[t] -= go;
                               }
                           });
}

// Mean negative log-probability over positions.
inline Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& targets) {
    Tensor s = cross_entropy_sum_from_logits(logits, targets);
    return scale_by_scalar(s, 1.0 / static_cast<double>(targets.size()));
}

// Euclidean norm of a - b. Subgradient 0 at coinciding inputs.
inline Tensor l2_distance(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("l2_distance", a, b);
    double sq = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        sq += d * d;
    }
    const double dist = std::sqrt(sq);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op("l2_distance", {1}, {dist}, {a, b}, [an, bn, dist](Node& o) {
        const double go = o.grad[0];
        const double inv = dist > 0.0 ? go / dist : 0.0;
        if (an->requires_grad) {
            auto& g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * (an->values[i] - bn->values[i]);
        }
        if (bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= inv * (an->values[i] - bn->values[i]);
        }
    });
}

// out[t, i] = sum_{t' < t} x[t', i]; row 0 is zero. Accumulation runs in
// ascending t so results match a plain prefix-sum loop bit for bit.
inline Tensor exclusive_prefix_sum_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("exclusive_prefix_sum_rows: expected rank 2");
    const Index t_len = x.size(0), n = x.size(1);
    std::vector<double> out(x.values().size(), 0.0);
    for (Index t = 1; t < t_len; ++t)
        for (Index i = 0; i < n; ++i)
            out[static_cast<std::size_t>(t * n + i)] = out[static_cast<std::size_t>((t - 1) * n + i)] +
                                                        x.values()[static_cast<std::size_t>((t - 1) * n + i)];
    auto xn = x.node();
    return detail::make_op("exclusive_prefix_sum_rows", x.shape(), std::move(out), {x},
                           [xn, t_len, n](Node& o) {
                               if (!xn->requires_grad) return;
                               auto& g = xn->grad_buffer();
                               std::vector<double> running(static_cast<std::size_t>(n), 0.0);
                               for (Index t = t_len - 1; t >= 0; --t) {
                                   for (Index i = 0; i < n; ++i) {
                                       g[static_cast<std::size_t>(t * n + i)] += running[static_cast<std::size_t>(i)];
                                       running[static_cast<std::size_t>(i)] += o.grad[static_cast<std::size_t>(t * n + i)];
                                   }
                               }
                           });
}

// Inverted dropout; caller's RNG supplies the mask so runs are reproducible.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.values().size());
    std::vector<double> out(x.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
        (*mask)[i] = m;
        out[i] = x.values()[i] * m;
    }
    auto xn = x.node();
    return detail::make_op("dropout", x.shape(), std::move(out), {x}, [xn, mask](Node& o) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
    });
}

}  // namespace covnat
