#include "ctxseg/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "kernels.hpp"

namespace ctxseg::ops {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

std::vector<double> copy_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions disagree for " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result({m, n}, std::move(out), {a, b},
                       [ai, bi, m, k, n](std::span<const double> g) {
                           if (ai->requires_grad) {
                               auto ga = grad_buffer(*ai);
                               kernels::gemm_nt(g.data(), bi->data.data(), ga.data(), m, n, k);
                           }
                           if (bi->requires_grad) {
                               auto gb = grad_buffer(*bi);
                               kernels::gemm_tn(ai->data.data(), g.data(), gb.data(), m, k, n);
                           }
                       },
                       "matmul");
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    auto d = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
    ImplPtr ai = a.impl();
    return make_result({n, m}, std::move(out), {a},
                       [ai, m, n](std::span<const double> g) {
                           auto ga = grad_buffer(*ai);
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                       },
                       "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = copy_of(a);
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {a, b},
                       [ai, bi](std::span<const double> g) {
                           accumulate_grad(*ai, g);
                           accumulate_grad(*bi, g);
                       },
                       "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto out = copy_of(a);
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {a, b},
                       [ai, bi](std::span<const double> g) {
                           accumulate_grad(*ai, g);
                           if (bi->requires_grad) {
                               auto gb = grad_buffer(*bi);
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                       },
                       "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = copy_of(a);
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {a, b},
                       [ai, bi](std::span<const double> g) {
                           if (ai->requires_grad) {
                               auto ga = grad_buffer(*ai);
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
                           }
                           if (bi->requires_grad) {
                               auto gb = grad_buffer(*bi);
                               for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
                           }
                       },
                       "mul");
}

Tensor scale(const Tensor& a, double s) {
    auto out = copy_of(a);
    for (auto& v : out) v *= s;
    ImplPtr ai = a.impl();
    return make_result(a.shape(), std::move(out), {a},
                       [ai, s](std::span<const double> g) {
                           auto ga = grad_buffer(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                       },
                       "scale");
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: factor must hold one element, got " +
                                         shape_to_string(s.shape()));
    const double sv = s[0];
    auto out = copy_of(x);
    for (auto& v : out) v *= sv;
    ImplPtr xi = x.impl(), si = s.impl();
    return make_result(x.shape(), std::move(out), {x, s},
                       [xi, si](std::span<const double> g) {
                           if (xi->requires_grad) {
                               auto gx = grad_buffer(*xi);
                               const double sv = si->data[0];
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
                           }
                           if (si->requires_grad) {
                               double acc = 0.0;
                               for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xi->data[i];
                               grad_buffer(*si)[0] += acc;
                           }
                       },
                       "scale_by");
}

namespace {

void check_row_operand(const Tensor& x, const Tensor& v, const char* op) {
    require_rank(x, 2, op);
    if (v.rank() != 1 || v.dim(0) != x.dim(1)) {
        throw ShapeError(std::string(op) + ": row operand " + shape_to_string(v.shape()) +
                         " does not match " + shape_to_string(x.shape()));
    }
}

}  // namespace

Tensor add_row(const Tensor& x, const Tensor& v) {
    check_row_operand(x, v, "add_row");
    const std::size_t s = x.dim(0), d = x.dim(1);
    auto out = copy_of(x);
    auto vd = v.data();
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] += vd[j];
    ImplPtr xi = x.impl(), vi = v.impl();
    return make_result(x.shape(), std::move(out), {x, v},
                       [xi, vi, s, d](std::span<const double> g) {
                           accumulate_grad(*xi, g);
                           if (vi->requires_grad) {
                               auto gv = grad_buffer(*vi);
                               for (std::size_t i = 0; i < s; ++i)
                                   for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j];
                           }
                       },
                       "add_row");
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
    check_row_operand(x, v, "mul_row");
    const std::size_t s = x.dim(0), d = x.dim(1);
    auto out = copy_of(x);
    auto vd = v.data();
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= vd[j];
    ImplPtr xi = x.impl(), vi = v.impl();
    return make_result(x.shape(), std::move(out), {x, v},
                       [xi, vi, s, d](std::span<const double> g) {
                           if (xi->requires_grad) {
                               auto gx = grad_buffer(*xi);
                               for (std::size_t i = 0; i < s; ++i)
                                   for (std::size_t j = 0; j < d; ++j)
                                       gx[i * d + j] += g[i * d + j] * vi->data[j];
                           }
                           if (vi->requires_grad) {
                               auto gv = grad_buffer(*vi);
                               for (std::size_t i = 0; i < s; ++i)
                                   for (std::size_t j = 0; j < d; ++j)
                                       gv[j] += g[i * d + j] * xi->data[i * d + j];
                           }
                       },
                       "mul_row");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const std::size_t s = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    if (w.dim(0) != in) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                         shape_to_string(w.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != out_dim) {
        throw ShapeError("linear: bias " + shape_to_string(b.shape()) + " does not match weight " +
                         shape_to_string(w.shape()));
    }
    std::vector<double> out(s * out_dim);
    auto bd = b.data();
    for (std::size_t i = 0; i < s; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * out_dim);
    kernels::gemm_nn(x.data().data(), w.data().data(), out.data(), s, in, out_dim);
    ImplPtr xi = x.impl(), wi = w.impl(), bi = b.impl();
    return make_result({s, out_dim}, std::move(out), {x, w, b},
                       [xi, wi, bi, s, in, out_dim](std::span<const double> g) {
                           if (xi->requires_grad) {
                               auto gx = grad_buffer(*xi);
                               kernels::gemm_nt(g.data(), wi->data.data(), gx.data(), s, out_dim, in);
                           }
                           if (wi->requires_grad) {
                               auto gw = grad_buffer(*wi);
                               kernels::gemm_tn(xi->data.data(), g.data(), gw.data(), s, in, out_dim);
                           }
                           if (bi->requires_grad) {
                               auto gb = grad_buffer(*bi);
                               for (std::size_t i = 0; i < s; ++i)
                                   for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
                           }
                       },
                       "linear");
}

Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    auto xd = x.data();
    std::vector<double> out(xd.size()), dydx(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double v = xd[i];
        const double t = std::tanh(c * (v + k * v * v * v));
        out[i] = 0.5 * v * (1.0 + t);
        dydx[i] = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
    }
    ImplPtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {x},
                       [xi, dydx = std::move(dydx)](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx[i];
                       },
                       "gelu");
}

Tensor relu(const Tensor& x) {
    auto out = copy_of(x);
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    ImplPtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {x},
                       [xi](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               if (xi->data[i] > 0.0) gx[i] += g[i];
                       },
                       "relu");
}

Tensor sigmoid(const Tensor& x) {
    auto out = copy_of(x);
    for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
    ImplPtr xi = x.impl();
    auto y = out;
    return make_result(x.shape(), std::move(out), {x},
                       [xi, y = std::move(y)](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
                       },
                       "sigmoid");
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    ImplPtr xi = x.impl();
    return make_result({1}, {acc}, {x},
                       [xi](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (auto& v : gx) v += g[0];
                       },
                       "sum");
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
    }
    ImplPtr xi = x.impl();
    return make_result(std::move(shape), copy_of(x), {x},
                       [xi](std::span<const double> g) { accumulate_grad(*xi, g); }, "reshape");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t d = parts.front().dim(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        if (p.dim(1) != d) {
            throw ShapeError("concat_rows: width mismatch " + shape_to_string(p.shape()) + " vs " +
                             shape_to_string(parts.front().shape()));
        }
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(rows * d);
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        impls.push_back(p.impl());
    }
    return make_result({rows, d}, std::move(out), parts,
                       [impls = std::move(impls)](std::span<const double> g) {
                           std::size_t offset = 0;
                           for (const auto& p : impls) {
                               const std::size_t n = p->data.size();
                               accumulate_grad(*p, g.subspan(offset, n));
                               offset += n;
                           }
                       },
                       "concat_rows");
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank(x, 2, "slice_rows");
    if (begin > end || end > x.dim(0)) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_to_string(x.shape()));
    }
    const std::size_t d = x.dim(1);
    std::vector<double> out(x.data().begin() + begin * d, x.data().begin() + end * d);
    ImplPtr xi = x.impl();
    return make_result({end - begin, d}, std::move(out), {x},
                       [xi, begin, d](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[begin * d + i] += g[i];
                       },
                       "slice_rows");
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    require_rank(table, 2, "gather_rows");
    const std::size_t d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    auto td = table.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= table.dim(0)) {
            throw ShapeError("gather_rows: id " + std::to_string(ids[r]) + " outside table " +
                             shape_to_string(table.shape()));
        }
        std::copy_n(td.begin() + ids[r] * d, d, out.begin() + r * d);
    }
    ImplPtr ti = table.impl();
    return make_result({ids.size(), d}, std::move(out), {table},
                       [ti, ids, d](std::span<const double> g) {
                           auto gt = grad_buffer(*ti);
                           for (std::size_t r = 0; r < ids.size(); ++r)
                               for (std::size_t j = 0; j < d; ++j) gt[ids[r] * d + j] += g[r * d + j];
                       },
                       "gather_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw ShapeError("layer_norm: empty normalization axis in " + shape_to_string(x.shape()));
    }
    if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: affine parameters do not match width " + std::to_string(d));
    }
    const std::size_t rows = x.numel() / d;
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * rstd[r];
            xhat[r * d + j] = h;
            out[r * d + j] = gd[j] * h + bd[j];
        }
    }
    ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [xi, gi, bi, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                        d](std::span<const double> g) {
                           if (gi->requires_grad) {
                               auto gg = grad_buffer(*gi);
                               for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += g[i] * xhat[i];
                           }
                           if (bi->requires_grad) {
                               auto gb = grad_buffer(*bi);
                               for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += g[i];
                           }
                           if (!xi->requires_grad) return;
                           auto gx = grad_buffer(*xi);
                           const double inv_d = 1.0 / static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const double dh = g[r * d + j] * gi->data[j];
                                   m1 += dh;
                                   m2 += dh * xhat[r * d + j];
                               }
                               m1 *= inv_d;
                               m2 *= inv_d;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const double dh = g[r * d + j] * gi->data[j];
                                   gx[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
                               }
                           }
                       },
                       "layer_norm");
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: probability must lie in [0,1)");
    if (p == 0.0) return x;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? s : 0.0;
    auto out = copy_of(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    ImplPtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {x},
                       [xi, mask = std::move(mask)](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                       },
                       "dropout");
}

namespace {

struct AttentionGeometry {
    std::size_t s, d, heads, dh;
};

AttentionGeometry attention_geometry(const Tensor& qkv, std::size_t heads) {
    require_rank(qkv, 2, "attention");
    if (qkv.dim(1) % 3 != 0) {
        throw ShapeError("attention: packed qkv width must be a multiple of 3, got " +
                         shape_to_string(qkv.shape()));
    }
    const std::size_t d = qkv.dim(1) / 3;
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " +
                          std::to_string(d));
    }
    return {qkv.dim(0), d, heads, d / heads};
}

// Copies head h's slice of block `which` (0=q,1=k,2=v) into dst[s,dh].
void extract_head(const double* qkv, double* dst, const AttentionGeometry& g, std::size_t which,
                  std::size_t h) {
    const std::size_t stride = 3 * g.d;
    for (std::size_t i = 0; i < g.s; ++i)
        std::copy_n(qkv + i * stride + which * g.d + h * g.dh, g.dh, dst + i * g.dh);
}

void softmax_rows(double* a, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* r = a + i * cols;
        const double mx = *std::max_element(r, r + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            z += r[j];
        }
        for (std::size_t j = 0; j < cols; ++j) r[j] /= z;
    }
}

// Fills weights[heads*s*s] and the attention output [s,d].
void attention_forward(const double* qkv, const AttentionGeometry& g, double* weights, double* out) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(g.dh));
    std::vector<double> q(g.s * g.dh), k(g.s * g.dh), v(g.s * g.dh), o(g.s * g.dh);
    for (std::size_t h = 0; h < g.heads; ++h) {
        extract_head(qkv, q.data(), g, 0, h);
        extract_head(qkv, k.data(), g, 1, h);
        extract_head(qkv, v.data(), g, 2, h);
        double* a = weights + h * g.s * g.s;
        std::fill_n(a, g.s * g.s, 0.0);
        kernels::gemm_nt(q.data(), k.data(), a, g.s, g.dh, g.s);
        for (std::size_t i = 0; i < g.s * g.s; ++i) a[i] *= inv_sqrt;
        softmax_rows(a, g.s, g.s);
        std::fill(o.begin(), o.end(), 0.0);
        kernels::gemm_nn(a, v.data(), o.data(), g.s, g.s, g.dh);
        for (std::size_t i = 0; i < g.s; ++i)
            std::copy_n(o.data() + i * g.dh, g.dh, out + i * g.d + h * g.dh);
    }
}

}  // namespace

std::vector<double> attention_weights(const Tensor& qkv, std::size_t heads) {
    const auto g = attention_geometry(qkv, heads);
    std::vector<double> weights(g.heads * g.s * g.s), out(g.s * g.d);
    attention_forward(qkv.data().data(), g, weights.data(), out.data());
    return weights;
}

Tensor attention_core(const Tensor& qkv, std::size_t heads) {
    const auto g = attention_geometry(qkv, heads);
    std::vector<double> weights(g.heads * g.s * g.s), out(g.s * g.d);
    attention_forward(qkv.data().data(), g, weights.data(), out.data());
    ImplPtr qi = qkv.impl();
    return make_result(
        {g.s, g.d}, std::move(out), {qkv},
        [qi, g, weights = std::move(weights)](std::span<const double> grad) {
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(g.dh));
            auto gq = grad_buffer(*qi);
            const double* qkv = qi->data.data();
            const std::size_t stride = 3 * g.d;
            std::vector<double> q(g.s * g.dh), k(g.s * g.dh), v(g.s * g.dh), go(g.s * g.dh);
            std::vector<double> da(g.s * g.s), dq(g.s * g.dh), dk(g.s * g.dh), dv(g.s * g.dh);
            for (std::size_t h = 0; h < g.heads; ++h) {
                extract_head(qkv, q.data(), g, 0, h);
                extract_head(qkv, k.data(), g, 1, h);
                extract_head(qkv, v.data(), g, 2, h);
                for (std::size_t i = 0; i < g.s; ++i)
                    std::copy_n(grad.data() + i * g.d + h * g.dh, g.dh, go.data() + i * g.dh);
                const double* a = weights.data() + h * g.s * g.s;
                // dA = dO V^T, dV = A^T dO
                std::fill(da.begin(), da.end(), 0.0);
                kernels::gemm_nt(go.data(), v.data(), da.data(), g.s, g.dh, g.s);
                std::fill(dv.begin(), dv.end(), 0.0);
                kernels::gemm_tn(a, go.data(), dv.data(), g.s, g.s, g.dh);
                // softmax backward, folded with the 1/sqrt(dh) scale
                for (std::size_t i = 0; i < g.s; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < g.s; ++j) dot += da[i * g.s + j] * a[i * g.s + j];
                    for (std::size_t j = 0; j < g.s; ++j)
                        da[i * g.s + j] = a[i * g.s + j] * (da[i * g.s + j] - dot) * inv_sqrt;
                }
                std::fill(dq.begin(), dq.end(), 0.0);
                kernels::gemm_nn(da.data(), k.data(), dq.data(), g.s, g.s, g.dh);
                std::fill(dk.begin(), dk.end(), 0.0);
                kernels::gemm_tn(da.data(), q.data(), dk.data(), g.s, g.s, g.dh);
                for (std::size_t i = 0; i < g.s; ++i) {
                    double* row = gq.data() + i * stride + h * g.dh;
                    for (std::size_t t = 0; t < g.dh; ++t) {
                        row[t] += dq[i * g.dh + t];
                        row[g.d + t] += dk[i * g.dh + t];
                        row[2 * g.d + t] += dv[i * g.dh + t];
                    }
                }
            }
        },
        "attention_core");
}

Tensor multi_head_attention(const Tensor& x, std::size_t heads, const AttentionParams& params) {
    require_rank(x, 2, "multi_head_attention");
    const std::size_t d = x.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("multi_head_attention: " + std::to_string(heads) +
                          " heads do not divide width " + std::to_string(d));
    }
    Tensor qkv = linear(x, params.w_qkv, params.b_qkv);
    return linear(attention_core(qkv, heads), params.w_out, params.b_out);
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
    require_rank(x, 3, "conv2d");
    require_rank(kernel, 4, "conv2d");
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != cin) {
        throw ShapeError("conv2d: kernel " + shape_to_string(kernel.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
    }
    if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_to_string(kernel.shape()) +
                         " larger than padded input " + shape_to_string(x.shape()));
    }
    const bool has_bias = bias.numel() > 0;
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
    }
    const std::size_t oh = h + 2 * padding - kh + 1, ow = w + 2 * padding - kw + 1;
    const auto ip = static_cast<std::ptrdiff_t>(padding);

    // Valid output range along one axis for tap offset t.
    auto range = [ip](std::size_t t, std::size_t in_len, std::size_t out_len) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(t) - ip;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_len),
                                     static_cast<std::ptrdiff_t>(in_len) - shift);
        return std::tuple{shift, lo, hi};
    };

    std::vector<double> out(cout * oh * ow, 0.0);
    auto xd = x.data();
    auto kd = kernel.data();
    for (std::size_t o = 0; o < cout; ++o) {
        double* op = out.data() + o * oh * ow;
        if (has_bias) std::fill_n(op, oh * ow, bias[o]);
        for (std::size_t c = 0; c < cin; ++c) {
            const double* xp = xd.data() + c * h * w;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [sy, y0, y1] = range(ky, h, oh);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    auto [sx, x0, x1] = range(kx, w, ow);
                    const double wv = kd[((o * cin + c) * kh + ky) * kw + kx];
                    for (std::ptrdiff_t y = y0; y < y1; ++y) {
                        double* orow = op + y * ow;
                        const double* xrow = xp + (y + sy) * static_cast<std::ptrdiff_t>(w) + sx;
                        for (std::ptrdiff_t xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
                    }
                }
            }
        }
    }
    ImplPtr xi = x.impl(), ki = kernel.impl(), bi = bias.impl();
    return make_result(
        {cout, oh, ow}, std::move(out), {x, kernel, bias},
        [xi, ki, bi, has_bias, cin, h, w, cout, kh, kw, oh, ow, range](std::span<const double> g) {
            if (has_bias && bi->requires_grad) {
                auto gb = grad_buffer(*bi);
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t i = 0; i < oh * ow; ++i) gb[o] += g[o * oh * ow + i];
            }
            const bool need_x = xi->requires_grad, need_k = ki->requires_grad;
            if (!need_x && !need_k) return;
            double* gx = need_x ? grad_buffer(*xi).data() : nullptr;
            double* gk = need_k ? grad_buffer(*ki).data() : nullptr;
            const double* xd = xi->data.data();
            const double* kd = ki->data.data();
            for (std::size_t o = 0; o < cout; ++o) {
                const double* gp = g.data() + o * oh * ow;
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* xp = xd + c * h * w;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        auto [sy, y0, y1] = range(ky, h, oh);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            auto [sx, x0, x1] = range(kx, w, ow);
                            const std::size_t kidx = ((o * cin + c) * kh + ky) * kw + kx;
                            const double wv = kd[kidx];
                            double acc = 0.0;
                            for (std::ptrdiff_t y = y0; y < y1; ++y) {
                                const double* grow = gp + y * ow;
                                const std::ptrdiff_t xoff =
                                    (y + sy) * static_cast<std::ptrdiff_t>(w) + sx;
                                if (need_k) {
                                    const double* xrow = xp + xoff;
                                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
                                }
                                if (need_x) {
                                    double* gxrow = gx + c * h * w + xoff;
                                    for (std::ptrdiff_t xx = x0; xx < x1; ++xx) gxrow[xx] += wv * grow[xx];
                                }
                            }
                            if (need_k) gk[kidx] += acc;
                        }
                    }
                }
            }
        },
        "conv2d");
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double w0, w1;
};

std::vector<Tap> bilinear_taps(std::size_t in_len, std::size_t factor) {
    std::vector<Tap> taps(in_len * factor);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0.0) src = 0.0;
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, in_len - 1);
        const double lambda = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - lambda, lambda};
    }
    return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
    require_rank(x, 3, "bilinear_upsample");
    if (factor == 0) throw ConfigError("bilinear_upsample: factor must be at least 1");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t oh = h * factor, ow = w * factor;
    auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
    std::vector<double> out(c * oh * ow);
    auto xd = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xp = xd.data() + ch * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            const Tap& a = ty[y];
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const Tap& b = tx[xx];
                out[(ch * oh + y) * ow + xx] =
                    a.w0 * (b.w0 * xp[a.i0 * w + b.i0] + b.w1 * xp[a.i0 * w + b.i1]) +
                    a.w1 * (b.w0 * xp[a.i1 * w + b.i0] + b.w1 * xp[a.i1 * w + b.i1]);
            }
        }
    }
    ImplPtr xi = x.impl();
    return make_result({c, oh, ow}, std::move(out), {x},
                       [xi, c, h, w, oh, ow, ty = std::move(ty), tx = std::move(tx)](std::span<const double> g) {
                           auto gx = grad_buffer(*xi);
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               double* gp = gx.data() + ch * h * w;
                               for (std::size_t y = 0; y < oh; ++y) {
                                   const Tap& a = ty[y];
                                   for (std::size_t xx = 0; xx < ow; ++xx) {
                                       const Tap& b = tx[xx];
                                       const double v = g[(ch * oh + y) * ow + xx];
                                       gp[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
                                       gp[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
                                       gp[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
                                       gp[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
                                   }
                               }
                           }
                       },
                       "bilinear_upsample");
}

Tensor tiles_to_image(const Tensor& tiles, std::size_t grid, std::size_t patch, std::size_t channels) {
    require_rank(tiles, 2, "tiles_to_image");
    if (tiles.dim(0) != grid * grid || tiles.dim(1) != channels * patch * patch) {
        throw ShapeError("tiles_to_image: tiles " + shape_to_string(tiles.shape()) +
                         " do not form a " + std::to_string(grid) + "x" + std::to_string(grid) +
                         " grid of " + std::to_string(channels) + "x" + std::to_string(patch) + "^2 tiles");
    }
    const std::size_t side = grid * patch;
    // index[i] = position in the image of tile element i
    std::vector<std::size_t> index(tiles.numel());
    const std::size_t tile_len = channels * patch * patch;
    for (std::size_t t = 0; t < grid * grid; ++t) {
        const std::size_t ty = t / grid, tx = t % grid;
        for (std::size_t ch = 0; ch < channels; ++ch)
            for (std::size_t py = 0; py < patch; ++py)
                for (std::size_t px = 0; px < patch; ++px)
                    index[t * tile_len + (ch * patch + py) * patch + px] =
                        (ch * side + ty * patch + py) * side + tx * patch + px;
    }
    std::vector<double> out(tiles.numel());
    auto td = tiles.data();
    for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] = td[i];
    ImplPtr ti = tiles.impl();
    return make_result({channels, side, side}, std::move(out), {tiles},
                       [ti, index = std::move(index)](std::span<const double> g) {
                           auto gt = grad_buffer(*ti);
                           for (std::size_t i = 0; i < index.size(); ++i) gt[i] += g[index[i]];
                       },
                       "tiles_to_image");
}

}  // namespace ctxseg::ops
