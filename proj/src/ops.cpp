#include "lmae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace lmae {
namespace {

template <typename Real>
using Node = TensorNode<Real>;

template <typename Real>
using BackwardFn = std::function<void(Node<Real>&)>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
}

[[noreturn]] void shape_invalid(const char* op, const Shape& a, const std::string& why) {
    throw ShapeError(std::string(op) + ": invalid shape " + shape_to_string(a) + " (" + why + ")");
}

/// Wraps a forward result; the closure is only attached when some input
/// tracks gradients.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value, const std::vector<const Tensor<Real>*>& inputs,
                         BackwardFn<Real> fn) {
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool any = false;
    for (const auto* t : inputs) {
        any = any || t->requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->parents.reserve(inputs.size());
        for (const auto* t : inputs) {
            node->parents.push_back(t->node_ptr());
        }
        node->backward_fn = std::move(fn);
    }
    return Tensor<Real>{std::move(node)};
}

template <typename Real>
bool wants_grad(const Node<Real>& self, std::size_t parent) {
    return self.parents[parent]->requires_grad;
}

// c[m,n] += a[m,k] * b[k,n]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        const Real* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        const Real* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            Real* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T
template <typename Real>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
    std::vector<Real> bt(n * k);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
            bt[j * k + p] = b[p * n + j];
        }
    }
    gemm_nn(m, k, n, a, bt.data(), c);
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        shape_invalid(op, shape, "axis " + std::to_string(axis) + " out of range");
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

std::size_t row_width(const Shape& shape) {
    std::size_t w = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) {
        w *= shape[i];
    }
    return w;
}

}  // namespace

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    std::size_t batch = 1;
    std::size_t m = 0;
    std::size_t k = 0;
    std::size_t n = 0;
    Shape out_shape;
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0]) {
            shape_mismatch("matmul", sa, sb);
        }
        m = sa[0];
        k = sa[1];
        n = sb[1];
        out_shape = {m, n};
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1]) {
            shape_mismatch("matmul", sa, sb);
        }
        batch = sa[0];
        m = sa[1];
        k = sa[2];
        n = sb[2];
        out_shape = {batch, m, n};
    } else {
        shape_mismatch("matmul", sa, sb);
    }

    std::vector<Real> out(batch * m * n, Real{0});
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        gemm_nn(m, n, k, pa + bi * m * k, pb + bi * k * n, out.data() + bi * m * n);
    }

    return make_result<Real>(std::move(out_shape), std::move(out), {&a, &b},
                             [batch, m, n, k](Node<Real>& self) {
                                 const Real* dy = self.grad.data();
                                 auto& na = *self.parents[0];
                                 auto& nb = *self.parents[1];
                                 if (na.requires_grad) {
                                     Real* da = na.grad_data();
                                     for (std::size_t bi = 0; bi < batch; ++bi) {
                                         gemm_nt(m, n, k, dy + bi * m * n, nb.value.data() + bi * k * n,
                                                 da + bi * m * k);
                                     }
                                 }
                                 if (nb.requires_grad) {
                                     Real* db = nb.grad_data();
                                     for (std::size_t bi = 0; bi < batch; ++bi) {
                                         gemm_tn(m, n, k, na.value.data() + bi * m * k, dy + bi * m * n,
                                                 db + bi * k * n);
                                     }
                                 }
                             });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        shape_mismatch("add", a.shape(), b.shape());
    }
    std::vector<Real> out(a.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[i] + db[i];
    }
    return make_result<Real>(a.shape(), std::move(out), {&a, &b}, [](Node<Real>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (wants_grad(self, p)) {
                Real* g = self.parents[p]->grad_data();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        shape_mismatch("sub", a.shape(), b.shape());
    }
    std::vector<Real> out(a.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[i] - db[i];
    }
    return make_result<Real>(a.shape(), std::move(out), {&a, &b}, [](Node<Real>& self) {
        if (wants_grad(self, 0)) {
            Real* g = self.parents[0]->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (wants_grad(self, 1)) {
            Real* g = self.parents[1]->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape()) {
        shape_mismatch("mul", a.shape(), b.shape());
    }
    std::vector<Real> out(a.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[i] * db[i];
    }
    return make_result<Real>(a.shape(), std::move(out), {&a, &b}, [](Node<Real>& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        if (na.requires_grad) {
            Real* g = na.grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * nb.value[i];
            }
        }
        if (nb.requires_grad) {
            Real* g = nb.grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * na.value[i];
            }
        }
    });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
    std::vector<Real> out(a.data().begin(), a.data().end());
    for (auto& v : out) {
        v *= factor;
    }
    return make_result<Real>(a.shape(), std::move(out), {&a}, [factor](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
    if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
        shape_mismatch("add_bias", x.shape(), bias.shape());
    }
    const std::size_t d = bias.dim(0);
    std::vector<Real> out(x.data().begin(), x.data().end());
    auto b = bias.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b[i % d];
    }
    return make_result<Real>(x.shape(), std::move(out), {&x, &bias}, [d](Node<Real>& self) {
        if (wants_grad(self, 0)) {
            Real* g = self.parents[0]->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (wants_grad(self, 1)) {
            Real* g = self.parents[1]->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i % d] += self.grad[i];
            }
        }
    });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        shape_mismatch("reshape", x.shape(), shape);
    }
    std::vector<Real> out(x.data().begin(), x.data().end());
    return make_result<Real>(std::move(shape), std::move(out), {&x}, [](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <typename Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
    const auto& in = x.shape();
    const std::size_t r = in.size();
    if (perm.size() != r) {
        shape_invalid("permute", in, "permutation of length " + std::to_string(perm.size()));
    }
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p]) {
            shape_invalid("permute", in, "axis list is not a permutation");
        }
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) {
        in_stride[i - 1] = in_stride[i] * in[i];
    }
    Shape out_shape(r);
    std::vector<std::size_t> stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[perm[i]];
        stride[i] = in_stride[perm[i]];
    }

    // Source offset for every output element, walked as an odometer.
    const std::size_t n = x.numel();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t offset = 0;
    for (std::size_t o = 0; o < n; ++o) {
        (*src)[o] = offset;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            offset += stride[ax];
            if (idx[ax] < out_shape[ax]) {
                break;
            }
            offset -= stride[ax] * idx[ax];
            idx[ax] = 0;
        }
    }

    std::vector<Real> out(n);
    auto xd = x.data();
    for (std::size_t o = 0; o < n; ++o) {
        out[o] = xd[(*src)[o]];
    }
    return make_result<Real>(std::move(out_shape), std::move(out), {&x}, [src](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        for (std::size_t o = 0; o < self.grad.size(); ++o) {
            g[(*src)[o]] += self.grad[o];
        }
    });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
    if (x.rank() != 2) {
        shape_invalid("transpose", x.shape(), "expected rank 2");
    }
    return permute(x, {1, 0});
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::span<const std::size_t> rows) {
    if (x.rank() < 1) {
        shape_invalid("gather_rows", x.shape(), "expected rank >= 1");
    }
    if (rows.empty()) {
        shape_invalid("gather_rows", x.shape(), "empty row selection");
    }
    const std::size_t n = x.dim(0);
    const std::size_t w = row_width(x.shape());
    for (auto r : rows) {
        if (r >= n) {
            shape_invalid("gather_rows", x.shape(), "row index " + std::to_string(r) + " out of range");
        }
    }
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    std::vector<Real> out(rows.size() * w);
    auto xd = x.data();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(rows[k] * w), w, out.begin() + static_cast<std::ptrdiff_t>(k * w));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result<Real>(std::move(out_shape), std::move(out), {&x}, [idx = std::move(idx), w](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        for (std::size_t k = 0; k < idx.size(); ++k) {
            Real* dst = g + idx[k] * w;
            const Real* dy = self.grad.data() + k * w;
            for (std::size_t j = 0; j < w; ++j) {
                dst[j] += dy[j];
            }
        }
    });
}

template <typename Real>
Tensor<Real> scatter_rows(const Tensor<Real>& src, std::span<const std::size_t> rows, std::size_t num_rows) {
    if (src.rank() < 1 || src.dim(0) != rows.size()) {
        shape_invalid("scatter_rows", src.shape(), "row count differs from index count " + std::to_string(rows.size()));
    }
    const std::size_t w = row_width(src.shape());
    for (auto r : rows) {
        if (r >= num_rows) {
            shape_invalid("scatter_rows", src.shape(), "row index " + std::to_string(r) + " out of range");
        }
    }
    Shape out_shape = src.shape();
    out_shape[0] = num_rows;
    std::vector<Real> out(num_rows * w, Real{0});
    auto sd = src.data();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t j = 0; j < w; ++j) {
            out[rows[k] * w + j] += sd[k * w + j];
        }
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result<Real>(std::move(out_shape), std::move(out), {&src}, [idx = std::move(idx), w](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        for (std::size_t k = 0; k < idx.size(); ++k) {
            for (std::size_t j = 0; j < w; ++j) {
                g[k * w + j] += self.grad[idx[k] * w + j];
            }
        }
    });
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    Shape out_shape = parts.front().shape();
    out_shape[0] = 0;
    std::vector<const Tensor<Real>*> inputs;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        Shape tail_a(p.shape().begin() + 1, p.shape().end());
        Shape tail_b(parts.front().shape().begin() + 1, parts.front().shape().end());
        if (p.rank() != parts.front().rank() || tail_a != tail_b) {
            shape_mismatch("concat_rows", parts.front().shape(), p.shape());
        }
        out_shape[0] += p.dim(0);
        inputs.push_back(&p);
        sizes.push_back(p.numel());
    }
    std::vector<Real> out;
    out.reserve(shape_numel(out_shape));
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return make_result<Real>(std::move(out_shape), std::move(out), inputs, [sizes = std::move(sizes)](Node<Real>& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < sizes.size(); ++p) {
            if (wants_grad(self, p)) {
                Real* g = self.parents[p]->grad_data();
                for (std::size_t i = 0; i < sizes[p]; ++i) {
                    g[i] += self.grad[offset + i];
                }
            }
            offset += sizes[p];
        }
    });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
    const auto s = split_at(x.shape(), axis, "softmax");
    std::vector<Real> out(x.numel());
    auto xd = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.len * s.inner + in;
            Real mx = xd[base];
            for (std::size_t l = 1; l < s.len; ++l) {
                mx = std::max(mx, xd[base + l * s.inner]);
            }
            Real total = 0;
            for (std::size_t l = 0; l < s.len; ++l) {
                const Real e = std::exp(xd[base + l * s.inner] - mx);
                out[base + l * s.inner] = e;
                total += e;
            }
            for (std::size_t l = 0; l < s.len; ++l) {
                out[base + l * s.inner] /= total;
            }
        }
    }
    return make_result<Real>(x.shape(), out, {&x}, [s, y = out](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        const Real* dy = self.grad.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.len * s.inner + in;
                Real dot = 0;
                for (std::size_t l = 0; l < s.len; ++l) {
                    dot += dy[base + l * s.inner] * y[base + l * s.inner];
                }
                for (std::size_t l = 0; l < s.len; ++l) {
                    const std::size_t i = base + l * s.inner;
                    g[i] += y[i] * (dy[i] - dot);
                }
            }
        }
    });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta, double eps) {
    if (x.rank() < 1 || gamma.rank() != 1 || gamma.dim(0) != x.shape().back()) {
        shape_mismatch("layer_norm", x.shape(), gamma.shape());
    }
    if (beta.shape() != gamma.shape()) {
        shape_mismatch("layer_norm", gamma.shape(), beta.shape());
    }
    const std::size_t d = gamma.dim(0);
    const std::size_t rows = x.numel() / d;
    std::vector<Real> out(x.numel());
    std::vector<Real> xhat(x.numel());
    std::vector<Real> rstd(rows);
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = static_cast<Real>(rs);
        for (std::size_t j = 0; j < d; ++j) {
            const Real xh = static_cast<Real>((row[j] - mu) * rs);
            xhat[r * d + j] = xh;
            out[r * d + j] = gd[j] * xh + bd[j];
        }
    }
    return make_result<Real>(x.shape(), std::move(out), {&x, &gamma, &beta},
                             [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<Real>& self) {
                                 const Real* dy = self.grad.data();
                                 auto& nx = *self.parents[0];
                                 auto& ng = *self.parents[1];
                                 auto& nb = *self.parents[2];
                                 if (nx.requires_grad) {
                                     Real* g = nx.grad_data();
                                     for (std::size_t r = 0; r < rows; ++r) {
                                         double mean_g = 0.0;
                                         double mean_gx = 0.0;
                                         for (std::size_t j = 0; j < d; ++j) {
                                             const double gj = static_cast<double>(dy[r * d + j]) * ng.value[j];
                                             mean_g += gj;
                                             mean_gx += gj * xhat[r * d + j];
                                         }
                                         mean_g /= static_cast<double>(d);
                                         mean_gx /= static_cast<double>(d);
                                         for (std::size_t j = 0; j < d; ++j) {
                                             const double gj = static_cast<double>(dy[r * d + j]) * ng.value[j];
                                             g[r * d + j] += static_cast<Real>(
                                                 rstd[r] * (gj - mean_g - xhat[r * d + j] * mean_gx));
                                         }
                                     }
                                 }
                                 if (ng.requires_grad) {
                                     Real* g = ng.grad_data();
                                     for (std::size_t i = 0; i < rows * d; ++i) {
                                         g[i % d] += dy[i] * xhat[i];
                                     }
                                 }
                                 if (nb.requires_grad) {
                                     Real* g = nb.grad_data();
                                     for (std::size_t i = 0; i < rows * d; ++i) {
                                         g[i % d] += dy[i];
                                     }
                                 }
                             });
}

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    constexpr Real inv_sqrt2 = static_cast<Real>(0.70710678118654752440);
    std::vector<Real> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = Real{0.5} * xd[i] * (Real{1} + std::erf(xd[i] * inv_sqrt2));
    }
    return make_result<Real>(x.shape(), std::move(out), {&x}, [](Node<Real>& self) {
        constexpr Real inv_sqrt2 = static_cast<Real>(0.70710678118654752440);
        const Real inv_sqrt2pi = static_cast<Real>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        auto& nx = *self.parents[0];
        Real* g = nx.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const Real v = nx.value[i];
            const Real cdf = Real{0.5} * (Real{1} + std::erf(v * inv_sqrt2));
            const Real pdf = inv_sqrt2pi * std::exp(Real{-0.5} * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

template <typename Real>
Tensor<Real> cos(const Tensor<Real>& x) {
    std::vector<Real> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::cos(xd[i]);
    }
    return make_result<Real>(x.shape(), std::move(out), {&x}, [](Node<Real>& self) {
        auto& nx = *self.parents[0];
        Real* g = nx.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] -= self.grad[i] * std::sin(nx.value[i]);
        }
    });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& x) {
    std::vector<Real> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xd[i] * xd[i];
    }
    return make_result<Real>(x.shape(), std::move(out), {&x}, [](Node<Real>& self) {
        auto& nx = *self.parents[0];
        Real* g = nx.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i] * Real{2} * nx.value[i];
        }
    });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real total = 0;
    for (auto v : x.data()) {
        total += v;
    }
    return make_result<Real>({1}, {total}, {&x}, [](Node<Real>& self) {
        auto& nx = *self.parents[0];
        Real* g = nx.grad_data();
        for (std::size_t i = 0; i < nx.value.size(); ++i) {
            g[i] += self.grad[0];
        }
    });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    return scale(sum(x), static_cast<Real>(1.0 / static_cast<double>(x.numel())));
}

template <typename Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, std::size_t axis) {
    const auto s = split_at(x.shape(), axis, "sum_axis");
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) {
        out_shape = {1};
    }
    std::vector<Real> out(s.outer * s.inner, Real{0});
    auto xd = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                out[o * s.inner + in] += xd[(o * s.len + l) * s.inner + in];
            }
        }
    }
    return make_result<Real>(std::move(out_shape), std::move(out), {&x}, [s](Node<Real>& self) {
        Real* g = self.parents[0]->grad_data();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t l = 0; l < s.len; ++l) {
                for (std::size_t in = 0; in < s.inner; ++in) {
                    g[(o * s.len + l) * s.inner + in] += self.grad[o * s.inner + in];
                }
            }
        }
    });
}

template <typename Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, std::size_t axis) {
    const auto len = x.dim(axis);
    return scale(sum_axis(x, axis), static_cast<Real>(1.0 / static_cast<double>(len)));
}

template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        shape_invalid("cross_entropy", logits.shape(), std::to_string(targets.size()) + " targets");
    }
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    std::vector<Real> probs(logits.numel());
    auto ld = logits.data();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const int t = targets[b];
        if (t < 0 || static_cast<std::size_t>(t) >= classes) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
        const Real* row = ld.data() + b * classes;
        Real mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            z += std::exp(static_cast<double>(row[c] - mx));
        }
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = static_cast<Real>(std::exp(static_cast<double>(row[c] - mx)) / z);
        }
        total += std::log(z) + mx - row[t];
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    return make_result<Real>({1}, {static_cast<Real>(total / static_cast<double>(batch))}, {&logits},
                             [probs = std::move(probs), tgt = std::move(tgt), batch, classes](Node<Real>& self) {
                                 Real* g = self.parents[0]->grad_data();
                                 const Real w = self.grad[0] / static_cast<Real>(batch);
                                 for (std::size_t b = 0; b < batch; ++b) {
                                     for (std::size_t c = 0; c < classes; ++c) {
                                         const Real onehot = static_cast<int>(c) == tgt[b] ? Real{1} : Real{0};
                                         g[b * classes + c] += w * (probs[b * classes + c] - onehot);
                                     }
                                 }
                             });
}

#define LMAE_INSTANTIATE_OPS(Real)                                                                          \
    template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                                 \
    template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                    \
    template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                    \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                    \
    template Tensor<Real> scale(const Tensor<Real>&, Real);                                                 \
    template Tensor<Real> add_bias(const Tensor<Real>&, const Tensor<Real>&);                               \
    template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                              \
    template Tensor<Real> permute(const Tensor<Real>&, const std::vector<std::size_t>&);                    \
    template Tensor<Real> transpose(const Tensor<Real>&);                                                   \
    template Tensor<Real> gather_rows(const Tensor<Real>&, std::span<const std::size_t>);                   \
    template Tensor<Real> scatter_rows(const Tensor<Real>&, std::span<const std::size_t>, std::size_t);     \
    template Tensor<Real> concat_rows(const std::vector<Tensor<Real>>&);                                    \
    template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                        \
    template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, double); \
    template Tensor<Real> gelu(const Tensor<Real>&);                                                        \
    template Tensor<Real> cos(const Tensor<Real>&);                                                         \
    template Tensor<Real> square(const Tensor<Real>&);                                                      \
    template Tensor<Real> sum(const Tensor<Real>&);                                                         \
    template Tensor<Real> mean(const Tensor<Real>&);                                                        \
    template Tensor<Real> sum_axis(const Tensor<Real>&, std::size_t);                                       \
    template Tensor<Real> mean_axis(const Tensor<Real>&, std::size_t);                                      \
    template Tensor<Real> cross_entropy(const Tensor<Real>&, std::span<const int>);

LMAE_INSTANTIATE_OPS(float)
LMAE_INSTANTIATE_OPS(double)

#undef LMAE_INSTANTIATE_OPS

}  // namespace lmae
