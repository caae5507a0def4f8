#include "parkcast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace parkcast {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

thread_local std::uint64_t g_mac_count = 0;

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t d = shape.size(); d-- > 1;) {
        strides[d - 1] = strides[d] * shape[d];
    }
    return strides;
}

// Strides of `s` aligned to the right against `out`; broadcast dims get 0.
std::vector<std::size_t> bcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    const auto own = row_major_strides(s);
    const std::size_t offset = out.size() - s.size();
    for (std::size_t d = 0; d < s.size(); ++d) {
        strides[offset + d] = (s[d] == 1 && out[offset + d] != 1) ? 0 : own[d];
    }
    return strides;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Visits every element of the broadcast output, yielding (i_out, i_a, i_b).
template <typename F>
void for_each_bcast(const Shape& out, const Shape& as, const Shape& bs, F&& f) {
    const std::size_t n = numel(out);
    if (as == bs) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    if (as == out && is_suffix(bs, out)) {
        const std::size_t bn = numel(bs);
        for (std::size_t i = 0; i < n; ++i) f(i, i, i % bn);
        return;
    }
    if (bs == out && is_suffix(as, out)) {
        const std::size_t an = numel(as);
        for (std::size_t i = 0; i < n; ++i) f(i, i % an, i);
        return;
    }
    const std::size_t nd = out.size();
    if (nd == 0) {
        f(0, 0, 0);
        return;
    }
    const auto astr = bcast_strides(as, out);
    const auto bstr = bcast_strides(bs, out);
    std::vector<std::size_t> coord(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = nd; d-- > 0;) {
            ++coord[d];
            ia += astr[d];
            ib += bstr[d];
            if (coord[d] < out[d]) break;
            ia -= astr[d] * out[d];
            ib -= bstr[d] * out[d];
            coord[d] = 0;
        }
    }
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (std::size_t d = 0; d < nd; ++d) {
        const std::size_t av = d < nd - a.size() ? 1 : a[d - (nd - a.size())];
        const std::size_t bv = d < nd - b.size() ? 1 : b[d - (nd - b.size())];
        if (av != bv && av != 1 && bv != 1) {
            throw ShapeError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        }
        out[d] = std::max(av, bv);
    }
    return out;
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T  (dot products of rows)
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

int normalize_axis(int axis, std::size_t ndim) {
    const int nd = static_cast<int>(ndim);
    const int a = axis < 0 ? axis + nd : axis;
    if (a < 0 || a >= nd) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(ndim));
    }
    return a;
}

void maybe_record(const char* op, const std::vector<const Tensor*>& inputs, Tensor& out,
                  std::function<void()> vjp) {
    GradTape& tape = GradTape::active();
    bool needs = false;
    std::vector<std::uint64_t> ids;
    ids.reserve(inputs.size());
    for (const Tensor* t : inputs) {
        needs = needs || t->requires_grad();
        ids.push_back(t->id());
    }
    if (!tape.enabled() || !needs) return;
    out.set_requires_grad(true);
    tape.record(op, std::move(ids), out, std::move(vjp));
}

} // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (d) os << ',';
        os << shape[d];
    }
    os << ')';
    return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
    }
    s_ = std::make_shared<Storage>();
    s_->shape = std::move(shape);
    s_->data.assign(numel(s_->shape), fill);
    s_->requires_grad = requires_grad;
    s_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor t(shape, 0.0, requires_grad);
    if (values.size() != t.size()) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    t.s_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& v : t.s_->data) v = rng.uniform(lo, hi);
    return t;
}

double Tensor::value() const {
    if (size() != 1) throw ShapeError("value() on non-scalar tensor " + shape_str(shape()));
    return s_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != ndim()) throw ShapeError("index rank mismatch");
    const auto strides = row_major_strides(s_->shape);
    std::size_t flat = 0, d = 0;
    for (std::size_t i : index) {
        if (i >= s_->shape[d]) throw ShapeError("index out of range");
        flat += i * strides[d++];
    }
    return s_->data[flat];
}

std::vector<double>& Tensor::grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
    return s_->grad;
}

Tensor Tensor::clone() const {
    Tensor t(s_->shape);
    t.s_->data = s_->data;
    t.s_->requires_grad = s_->requires_grad;
    return t;
}

// ---- GradTape ---------------------------------------------------------------

GradTape& GradTape::active() {
    thread_local GradTape tape;
    return tape;
}

void GradTape::record(std::string op, std::vector<std::uint64_t> input_ids, Tensor output,
                      std::function<void()> vjp) {
    Entry e;
    e.op = std::move(op);
    e.input_ids = std::move(input_ids);
    e.output_id = output.id();
    e.output = std::move(output);
    e.vjp = std::move(vjp);
    entries_.push_back(std::move(e));
}

void GradTape::backward(Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw Error("backward: loss must be a defined scalar");
    }
    if (!loss.requires_grad()) {
        throw Error("backward: loss is detached (no taped path to it)");
    }
    loss.grad()[0] = 1.0;
    for (std::size_t i = entries_.size(); i-- > 0;) {
        Entry& e = entries_[i];
        if (e.output.grad_allocated()) e.vjp();
    }
    clear();
}

void backward(Tensor loss) { GradTape::active().backward(loss); }

namespace mac_counter {
void reset() { g_mac_count = 0; }
std::uint64_t value() { return g_mac_count; }
void add(std::uint64_t macs) { g_mac_count += macs; }
} // namespace mac_counter

// ---- elementwise binary -----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    Tensor out(out_shape);
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for_each_bcast(out_shape, a.shape(), b.shape(),
                   [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       ov[i] = fwd(av[ia], bv[ib]);
                   });
    maybe_record(name, {&a, &b}, out, [a, b, out, bwd]() mutable {
        const auto& go = out.grad();
        const auto& av = a.data();
        const auto& bv = b.data();
        const bool need_a = a.requires_grad();
        const bool need_b = b.requires_grad();
        std::vector<double>* ga = need_a ? &a.grad() : nullptr;
        std::vector<double>* gb = need_b ? &b.grad() : nullptr;
        for_each_bcast(out.shape(), a.shape(), b.shape(),
                       [&](std::size_t i, std::size_t ia, std::size_t ib) {
                           double da, db;
                           bwd(av[ia], bv[ib], go[i], da, db);
                           if (ga) (*ga)[ia] += da;
                           if (gb) (*gb)[ib] += db;
                       });
    });
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor scale(const Tensor& x, double c) {
    Tensor out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * c;
    maybe_record("scale", {&x}, out, [x, out, c]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    });
    return out;
}

Tensor add_scalar(const Tensor& x, double c) {
    Tensor out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + c;
    maybe_record("add_scalar", {&x}, out, [x, out]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    maybe_record("relu", {&x}, out, [x, out]() mutable {
        const auto& go = out.grad();
        const auto& xv = x.data();
        auto& gx = x.grad();
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += go[i];
        }
    });
    return out;
}

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) {
        throw ShapeError("matmul requires rank >= 2: " + shape_str(as) + " x " + shape_str(bs));
    }
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as[as.size() - 1];
    const std::size_t k2 = bs[bs.size() - 2];
    const std::size_t n = bs[bs.size() - 1];
    if (k != k2) {
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(as) + " x " +
                         shape_str(bs));
    }
    const Shape abatch(as.begin(), as.end() - 2);
    const Shape bbatch(bs.begin(), bs.end() - 2);
    const Shape batch = broadcast_shapes(abatch, bbatch);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    Tensor out(out_shape);
    const Shape batch_or_scalar = batch.empty() ? Shape{1} : batch;
    const Shape abatch_n = abatch.empty() ? Shape{1} : abatch;
    const Shape bbatch_n = bbatch.empty() ? Shape{1} : bbatch;

    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* op = out.data().data();
    std::size_t n_batches = numel(batch_or_scalar);
    for_each_bcast(batch_or_scalar, abatch_n, bbatch_n,
                   [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       gemm_nn(ap + ia * m * k, bp + ib * k * n, op + i * m * n, m, k, n);
                   });
    mac_counter::add(static_cast<std::uint64_t>(n_batches) * m * k * n);

    maybe_record("matmul", {&a, &b}, out,
                 [a, b, out, batch_or_scalar, abatch_n, bbatch_n, m, k, n]() mutable {
                     const auto& go = out.grad();
                     const double* gop = go.data();
                     const double* ap = a.data().data();
                     const double* bp = b.data().data();
                     double* gap = a.requires_grad() ? a.grad().data() : nullptr;
                     double* gbp = b.requires_grad() ? b.grad().data() : nullptr;
                     for_each_bcast(batch_or_scalar, abatch_n, bbatch_n,
                                    [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                        if (gap) {
                                            gemm_nt(gop + i * m * n, bp + ib * k * n,
                                                    gap + ia * m * k, m, n, k);
                                        }
                                        if (gbp) {
                                            gemm_tn(ap + ia * m * k, gop + i * m * n,
                                                    gbp + ib * k * n, m, k, n);
                                        }
                                    });
                 });
    return out;
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.ndim());
    const Shape& shape = x.shape();
    const std::size_t n = shape[ax];
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= shape[d];
    for (std::size_t d = ax + 1; d < shape.size(); ++d) inner *= shape[d];

    Tensor out(shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = xv[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(xv[base + j * inner] - mx);
                ov[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) ov[base + j * inner] /= total;
        }
    }
    maybe_record("softmax", {&x}, out, [x, out, outer, inner, n]() mutable {
        const auto& go = out.grad();
        const auto& yv = out.data();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += go[base + j * inner] * yv[base + j * inner];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t idx = base + j * inner;
                    gx[idx] += yv[idx] * (go[idx] - dot);
                }
            }
        }
    });
    return out;
}

// ---- layer norm ---------------------------------------------------------------

Tensor layer_norm(const Tensor& h, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm eps must be > 0");
    const Shape& shape = h.shape();
    const std::size_t d = shape.back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm parameter shape mismatch: feature dim " + std::to_string(d) +
                         ", gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()));
    }
    const std::size_t rows = h.size() / d;
    Tensor out(shape);
    auto mu = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    const auto& hv = h.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    auto& ov = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = hv.data() + r * d;
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += row[j];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - m;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mu)[r] = m;
        (*rstd)[r] = rs;
        double* orow = ov.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = (row[j] - m) * rs * gv[j] + bv[j];
        }
    }
    maybe_record("layer_norm", {&h, &gamma, &beta}, out,
                 [h, gamma, beta, out, mu, rstd, rows, d]() mutable {
                     const auto& go = out.grad();
                     const auto& hv = h.data();
                     const auto& gv = gamma.data();
                     const bool need_h = h.requires_grad();
                     const bool need_g = gamma.requires_grad();
                     const bool need_b = beta.requires_grad();
                     std::vector<double>* gh = need_h ? &h.grad() : nullptr;
                     std::vector<double>* gg = need_g ? &gamma.grad() : nullptr;
                     std::vector<double>* gb = need_b ? &beta.grad() : nullptr;
                     std::vector<double> xhat(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                         const double* row = hv.data() + r * d;
                         const double* grow = go.data() + r * d;
                         const double m = (*mu)[r];
                         const double rs = (*rstd)[r];
                         double mean_dy = 0.0, mean_dy_x = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                             xhat[j] = (row[j] - m) * rs;
                             const double dyh = grow[j] * gv[j];
                             mean_dy += dyh;
                             mean_dy_x += dyh * xhat[j];
                         }
                         mean_dy /= static_cast<double>(d);
                         mean_dy_x /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                             if (gh) {
                                 const double dyh = grow[j] * gv[j];
                                 (*gh)[r * d + j] += rs * (dyh - mean_dy - xhat[j] * mean_dy_x);
                             }
                             if (gg) (*gg)[j] += grow[j] * xhat[j];
                             if (gb) (*gb)[j] += grow[j];
                         }
                     }
                 });
    return out;
}

// ---- shape ops -----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    }
    Tensor out = Tensor::from_data(std::move(new_shape), x.data());
    maybe_record("reshape", {&x}, out, [x, out]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
    return out;
}

namespace {

// Visits (input linear index, output linear index) pairs for a permutation.
template <typename F>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& axes, F&& f) {
    const std::size_t nd = in_shape.size();
    Shape out_shape(nd);
    for (std::size_t j = 0; j < nd; ++j) out_shape[j] = in_shape[axes[j]];
    const auto ostr = row_major_strides(out_shape);
    // contribution of input dim d to the output linear index
    std::vector<std::size_t> contrib(nd, 0);
    for (std::size_t j = 0; j < nd; ++j) contrib[axes[j]] = ostr[j];
    std::vector<std::size_t> coord(nd, 0);
    const std::size_t n = numel(in_shape);
    std::size_t oi = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, oi);
        for (std::size_t d = nd; d-- > 0;) {
            ++coord[d];
            oi += contrib[d];
            if (coord[d] < in_shape[d]) break;
            oi -= contrib[d] * in_shape[d];
            coord[d] = 0;
        }
    }
}

} // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t nd = x.ndim();
    if (axes.size() != nd) {
        throw ShapeError("permutation rank mismatch for " + shape_str(x.shape()));
    }
    std::vector<bool> seen(nd, false);
    for (std::size_t a : axes) {
        if (a >= nd || seen[a]) throw ShapeError("invalid axis permutation");
        seen[a] = true;
    }
    Shape out_shape(nd);
    for (std::size_t j = 0; j < nd; ++j) out_shape[j] = x.shape()[axes[j]];
    Tensor out(out_shape);
    const auto& xv = x.data();
    auto& ov = out.data();
    for_each_permuted(x.shape(), axes, [&](std::size_t i, std::size_t oi) { ov[oi] = xv[i]; });
    maybe_record("permute", {&x}, out, [x, out, axes]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        for_each_permuted(x.shape(), axes,
                          [&](std::size_t i, std::size_t oi) { gx[i] += go[oi]; });
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& first = parts[0].shape();
    const std::size_t nd = first.size();
    if (axis >= nd) throw ShapeError("concat axis out of range");
    std::size_t total_axis = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) throw ShapeError("concat rank mismatch");
        for (std::size_t d = 0; d < nd; ++d) {
            if (d != axis && p.shape()[d] != first[d]) {
                throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " +
                                 shape_str(p.shape()));
            }
        }
        total_axis += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total_axis;
    Tensor out(out_shape);

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < nd; ++d) inner *= first[d];

    auto& ov = out.data();
    std::size_t axis_offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t pa = p.shape()[axis];
        const auto& pv = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(ov.data() + (o * total_axis + axis_offset) * inner,
                        pv.data() + o * pa * inner, pa * inner * sizeof(double));
        }
        axis_offset += pa;
    }

    std::vector<const Tensor*> input_ptrs;
    for (const Tensor& p : parts) input_ptrs.push_back(&p);
    maybe_record("concat", input_ptrs, out, [parts, out, axis, outer, inner, total_axis]() mutable {
        const auto& go = out.grad();
        std::size_t axis_offset = 0;
        for (Tensor p : parts) {
            const std::size_t pa = p.shape()[axis];
            if (p.requires_grad()) {
                auto& gp = p.grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = go.data() + (o * total_axis + axis_offset) * inner;
                    double* dst = gp.data() + o * pa * inner;
                    for (std::size_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                }
            }
            axis_offset += pa;
        }
    });
    return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) throw ShapeError("slice axis out of range");
    if (len == 0 || start + len > shape[axis]) {
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(shape));
    }
    Shape out_shape = shape;
    out_shape[axis] = len;
    Tensor out(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    const std::size_t n_axis = shape[axis];
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(ov.data() + o * len * inner, xv.data() + (o * n_axis + start) * inner,
                    len * inner * sizeof(double));
    }
    maybe_record("slice", {&x}, out, [x, out, outer, inner, n_axis, start, len]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = go.data() + o * len * inner;
            double* dst = gx.data() + (o * n_axis + start) * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

Tensor take(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) throw ShapeError("take axis out of range");
    if (indices.empty()) throw ShapeError("take with empty index list");
    for (std::size_t i : indices) {
        if (i >= shape[axis]) throw ShapeError("take index out of range for " + shape_str(shape));
    }
    Shape out_shape = shape;
    out_shape[axis] = indices.size();
    Tensor out(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    const std::size_t n_axis = shape[axis];
    const std::size_t n_sel = indices.size();
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < n_sel; ++j) {
            std::memcpy(ov.data() + (o * n_sel + j) * inner,
                        xv.data() + (o * n_axis + indices[j]) * inner, inner * sizeof(double));
        }
    }
    maybe_record("take", {&x}, out, [x, out, indices, outer, inner, n_axis]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        const std::size_t n_sel = indices.size();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < n_sel; ++j) {
                const double* src = go.data() + (o * n_sel + j) * inner;
                double* dst = gx.data() + (o * n_axis + indices[j]) * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
        }
    });
    return out;
}

// ---- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor out = Tensor::scalar(total);
    maybe_record("sum", {&x}, out, [x, out]() mutable {
        const double g = out.grad()[0];
        auto& gx = x.grad();
        for (double& v : gx) v += g;
    });
    return out;
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor out = Tensor::scalar(total * inv);
    maybe_record("mean", {&x}, out, [x, out, inv]() mutable {
        const double g = out.grad()[0] * inv;
        auto& gx = x.grad();
        for (double& v : gx) v += g;
    });
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor d = sub(a, b);
    return mean(mul(d, d));
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0,1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (double& m : *mask) m = rng.uniform() >= p ? keep_scale : 0.0;
    Tensor out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * (*mask)[i];
    maybe_record("dropout", {&x}, out, [x, out, mask]() mutable {
        const auto& go = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
    });
    return out;
}

bool all_finite(const Tensor& x) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- Adam --------------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamParams& hp) {
    if (hp.lr <= 0.0) throw ConfigError("adam learning rate must be > 0");
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
        state.step = 0;
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& param = params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& w = param.data();
        const bool has_grad = param.grad_allocated();
        const std::vector<double>* g = has_grad ? &param.grad() : nullptr;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g ? (*g)[j] : 0.0;
            if (!std::isfinite(gj)) {
                throw TrainingError("non-finite gradient in parameter " + std::to_string(i));
            }
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
        }
    }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamParams hp)
    : params_(std::move(params)), hp_(hp) {}

void AdamOptimizer::step() { adam_step(params_, state_, hp_); }

void AdamOptimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

} // namespace parkcast
