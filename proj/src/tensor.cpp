#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace dolphin {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void validate_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimension must be >= 1, got shape " + shape_str(shape));
    }
}

void check_finite(const std::vector<double>& v, const char* ctx) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + ctx);
    }
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* ctx) { check_finite(t.data(), ctx); }
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

// leading/axis decomposition: shape = outer x shape[axis] x inner
void axis_split(const std::vector<std::size_t>& shape, std::size_t axis, std::size_t& outer, std::size_t& n,
                std::size_t& inner) {
    if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    n = shape[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

bool is_suffix(const std::vector<std::size_t>& small, const std::vector<std::size_t>& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_suffix(const Tensor& a, const Tensor& b, const char* op) {
    if (!is_suffix(b.shape(), a.shape()))
        throw ShapeError(std::string(op) + ": shape " + shape_str(b.shape()) + " is not a suffix of " +
                         shape_str(a.shape()));
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

// ---- Tensor ----

Tensor Tensor::make(std::vector<std::size_t> shape, std::vector<double> data, bool finite) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size())
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    if (finite) check_finite(data, "tensor construction");
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->value = std::move(data);
    return Tensor(std::move(impl));
}

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data, bool check_finite) {
    return Tensor::make(std::move(shape), std::move(data), check_finite);
}

Tensor Tensor::zeros(const std::vector<std::size_t>& shape) {
    validate_shape(shape);
    return make(shape, std::vector<double>(shape_numel(shape), 0.0), false);
}

Tensor Tensor::ones(const std::vector<std::size_t>& shape) {
    validate_shape(shape);
    return make(shape, std::vector<double>(shape_numel(shape), 1.0), false);
}

Tensor Tensor::randn(const std::vector<std::size_t>& shape, std::uint64_t seed, double std_dev) {
    validate_shape(shape);
    std::mt19937_64 rng(seed);
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    // explicit Box-Muller so the stream does not depend on the stdlib's
    // normal_distribution implementation
    auto uniform = [&rng]() {
        return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);  // (0,1)
    };
    for (std::size_t i = 0; i < n; i += 2) {
        double u1 = uniform(), u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        data[i] = std_dev * r * std::cos(2.0 * M_PI * u2);
        if (i + 1 < n) data[i + 1] = std_dev * r * std::sin(2.0 * M_PI * u2);
    }
    return make(shape, std::move(data), false);
}

Tensor Tensor::from_data(const std::vector<std::size_t>& shape, std::vector<double> data) {
    return make(shape, std::move(data));
}

Tensor Tensor::scalar(double v) { return make({1}, {v}); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->value[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (!rg) impl_->grad.clear();
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw TensorError("tensor has no gradient");
    return impl_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
    if (!impl_->requires_grad) throw TensorError("grad_buffer on a tensor with requires_grad=false");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->value.size(), 0.0);
}

// ---- Tape ----

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape* Tape::current() { return g_current_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = previous_; }

void Tape::record(Tensor output, std::function<void()> pull) {
    nodes_.push_back(Node{std::move(output), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw TensorError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    bool on_tape = false;
    for (const auto& node : nodes_) {
        if (node.output.same_storage(loss)) {
            on_tape = true;
            break;
        }
    }
    if (!on_tape && loss.requires_grad())
        throw TensorError("loss tensor is not connected to this tape");
    Tensor seed = loss;
    if (seed.requires_grad()) seed.grad_buffer()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // branch not connected to the loss
        it->pull();
    }
}

// ---- op recording helper ----

namespace {

bool track(std::initializer_list<Tensor> inputs) {
    if (!Tape::current()) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

void record(Tensor& out, std::function<void()> pull) {
    out.set_requires_grad(true);
    Tape::current()->record(out, std::move(pull));
}

// accumulate grad g (shaped like big) into small via sum over leading dims
void reduce_into_suffix(const std::vector<double>& g, const std::vector<std::size_t>& big_shape, Tensor small) {
    auto& sg = small.grad_buffer();
    const std::size_t m = sg.size();
    for (std::size_t i = 0; i < g.size(); ++i) sg[i % m] += g[i];
    (void)big_shape;
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_suffix(a, b, "add");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(av.size());
    const std::size_t m = bv.size();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % m];
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    debug_check_finite(r, "add");
    if (track({a, b})) {
        Tensor ra = a, rb = b;
        record(r, [r, ra, rb]() mutable {
            const auto& g = r.grad();
            if (ra.requires_grad()) {
                auto& ga = ra.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (rb.requires_grad()) reduce_into_suffix(g, r.shape(), rb);
        });
    }
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_suffix(a, b, "sub");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(av.size());
    const std::size_t m = bv.size();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i % m];
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    debug_check_finite(r, "sub");
    if (track({a, b})) {
        Tensor ra = a, rb = b;
        record(r, [r, ra, rb]() mutable {
            const auto& g = r.grad();
            if (ra.requires_grad()) {
                auto& ga = ra.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (rb.requires_grad()) {
                auto& gb = rb.grad_buffer();
                const std::size_t m2 = gb.size();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % m2] -= g[i];
            }
        });
    }
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_suffix(a, b, "mul");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(av.size());
    const std::size_t m = bv.size();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i % m];
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    debug_check_finite(r, "mul");
    if (track({a, b})) {
        Tensor ra = a, rb = b;
        record(r, [r, ra, rb]() mutable {
            const auto& g = r.grad();
            const auto& av2 = ra.data();
            const auto& bv2 = rb.data();
            const std::size_t m2 = bv2.size();
            if (ra.requires_grad()) {
                auto& ga = ra.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i % m2];
            }
            if (rb.requires_grad()) {
                auto& gb = rb.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % m2] += g[i] * av2[i];
            }
        });
    }
    return r;
}

Tensor scale(const Tensor& a, double c) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    debug_check_finite(r, "scale");
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra, c]() mutable {
            const auto& g = r.grad();
            if (ra.requires_grad()) {
                auto& ga = ra.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
            }
        });
    }
    return r;
}

Tensor gelu(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * kInvSqrt2));
    }
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    debug_check_finite(r, "gelu");
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            const auto& x = ra.data();
            auto& ga = ra.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
                ga[i] += g[i] * (cdf + x[i] * pdf);
            }
        });
    }
    return r;
}

Tensor log_op(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] <= 0.0) throw NumericError("log of non-positive value");
        out[i] = std::log(av[i]);
    }
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            const auto& x = ra.data();
            auto& ga = ra.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
        });
    }
    return r;
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2)
        throw ShapeError("matmul expects a:[..,m,k] b:[k,n], got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(a.rank() - 2);
    const std::size_t k = a.dim(a.rank() - 1);
    if (b.dim(0) != k)
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = b.dim(1);
    std::size_t batch = a.size() / (m * k);

    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t q = 0; q < batch; ++q) {
        const double* A = av.data() + q * m * k;
        double* O = out.data() + q * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                if (aip == 0.0) continue;
                const double* B = bv.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) O[i * n + j] += aip * B[j];
            }
    }
    std::vector<std::size_t> out_shape(a.shape());
    out_shape[out_shape.size() - 1] = n;
    Tensor r = make_tensor(std::move(out_shape), std::move(out), false);
    debug_check_finite(r, "matmul");
    if (track({a, b})) {
        Tensor ra = a, rb = b;
        record(r, [r, ra, rb, batch, m, k, n]() mutable {
            const auto& g = r.grad();
            const auto& av2 = ra.data();
            const auto& bv2 = rb.data();
            if (ra.requires_grad()) {
                auto& ga = ra.grad_buffer();
                for (std::size_t q = 0; q < batch; ++q) {
                    const double* G = g.data() + q * m * n;
                    double* GA = ga.data() + q * m * k;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * bv2[p * n + j];
                            GA[i * k + p] += s;
                        }
                }
            }
            if (rb.requires_grad()) {
                auto& gb = rb.grad_buffer();
                for (std::size_t q = 0; q < batch; ++q) {
                    const double* G = g.data() + q * m * n;
                    const double* A = av2.data() + q * m * k;
                    for (std::size_t p = 0; p < k; ++p)
                        for (std::size_t j = 0; j < n; ++j) {
                            double s = 0.0;
                            for (std::size_t i = 0; i < m; ++i) s += A[i * k + p] * G[i * n + j];
                            gb[p * n + j] += s;
                        }
                }
            }
        });
    }
    return r;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d expects rank 2, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto& av = a.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    Tensor r = make_tensor({n, m}, std::move(out), false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra, m, n]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            auto& ga = ra.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return r;
}

// ---- softmax / reductions ----

Tensor softmax(const Tensor& a, std::size_t axis) {
    std::size_t outer, n, inner;
    axis_split(a.shape(), axis, outer, n, inner);
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = av[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, av[base + i * inner]);
            double denom = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double e = std::exp(av[base + i * inner] - mx);
                out[base + i * inner] = e;
                denom += e;
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= denom;
        }
    Tensor r = make_tensor(a.shape(), std::move(out), false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra, outer, n, inner]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            const auto& y = r.data();
            auto& ga = ra.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
                    for (std::size_t i = 0; i < n; ++i)
                        ga[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
                }
        });
    }
    return r;
}

namespace {

Tensor reduce_axis(const Tensor& a, std::size_t axis, bool take_mean) {
    std::size_t outer, n, inner;
    axis_split(a.shape(), axis, outer, n, inner);
    const auto& av = a.data();
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += av[(o * n + i) * inner + in];
    const double c = take_mean ? 1.0 / static_cast<double>(n) : 1.0;
    if (take_mean)
        for (double& v : out) v *= c;
    std::vector<std::size_t> out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor r = make_tensor(std::move(out_shape), std::move(out), false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra, outer, n, inner, c]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            auto& ga = ra.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t in = 0; in < inner; ++in) ga[(o * n + i) * inner + in] += g[o * inner + in] * c;
        });
    }
    return r;
}

}  // namespace

Tensor mean(const Tensor& a, std::size_t axis) { return reduce_axis(a, axis, true); }
Tensor sum(const Tensor& a, std::size_t axis) { return reduce_axis(a, axis, false); }

Tensor sum_all(const Tensor& a) {
    const auto& av = a.data();
    double s = 0.0;
    for (double v : av) s += v;  // fixed left-to-right order
    Tensor r = make_tensor({1}, {s}, false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra]() mutable {
            if (!ra.requires_grad()) return;
            const double g = r.grad()[0];
            auto& ga = ra.grad_buffer();
            for (double& v : ga) v += g;
        });
    }
    return r;
}

// ---- layer norm (last axis) ----

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.dim(x.rank() - 1);
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm gamma/beta must have length " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r0 = 0; r0 < rows; ++r0) {
        const double* row = xv.data() + r0 * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r0] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r0 * d + j] = (row[j] - mu) * is;
            out[r0 * d + j] = gv[j] * xhat[r0 * d + j] + bv[j];
        }
    }
    Tensor r = make_tensor(x.shape(), std::move(out), false);
    debug_check_finite(r, "layer_norm");
    if (track({x, gamma, beta})) {
        Tensor rx = x, rg = gamma, rb = beta;
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
        record(r, [r, rx, rg, rb, xh, is, rows, d]() mutable {
            const auto& g = r.grad();
            const auto& gv2 = rg.data();
            if (rg.requires_grad()) {
                auto& gg = rg.grad_buffer();
                for (std::size_t r0 = 0; r0 < rows; ++r0)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[r0 * d + j] * (*xh)[r0 * d + j];
            }
            if (rb.requires_grad()) {
                auto& gb = rb.grad_buffer();
                for (std::size_t r0 = 0; r0 < rows; ++r0)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[r0 * d + j];
            }
            if (rx.requires_grad()) {
                auto& gx = rx.grad_buffer();
                for (std::size_t r0 = 0; r0 < rows; ++r0) {
                    double sum_dy = 0.0, sum_dy_xh = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        double dy = g[r0 * d + j] * gv2[j];
                        sum_dy += dy;
                        sum_dy_xh += dy * (*xh)[r0 * d + j];
                    }
                    const double invd = 1.0 / static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        double dy = g[r0 * d + j] * gv2[j];
                        gx[r0 * d + j] +=
                            (*is)[r0] * (dy - invd * sum_dy - (*xh)[r0 * d + j] * invd * sum_dy_xh);
                    }
                }
            }
        });
    }
    return r;
}

// ---- structural ops ----

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const auto& s0 = parts[0].shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.dim(i) != s0[i])
                throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(s0));
        total += p.dim(axis);
    }
    std::vector<std::size_t> out_shape(s0);
    out_shape[axis] = total;
    std::size_t outer, n, inner;
    axis_split(out_shape, axis, outer, n, inner);
    std::vector<double> out(outer * n * inner);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pn = p.dim(axis);
        const auto& pv = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * n + off) * inner, pv.data() + o * pn * inner, pn * inner * sizeof(double));
        off += pn;
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out), false);
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (Tape::current() && any) {
        std::vector<Tensor> held(parts);
        record(r, [r, held, outer, n, inner]() mutable {
            const auto& g = r.grad();
            std::size_t off2 = 0;
            for (auto& p : held) {
                const std::size_t axis_of = p.size() / (outer * inner);
                if (p.requires_grad()) {
                    auto& gp = p.grad_buffer();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < axis_of * inner; ++i)
                            gp[o * axis_of * inner + i] += g[(o * n + off2) * inner + i];
                }
                off2 += axis_of;
            }
        });
    }
    return r;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    std::size_t outer, n, inner;
    axis_split(a.shape(), axis, outer, n, inner);
    if (start + len > n || len == 0)
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) + ") out of range for " +
                         shape_str(a.shape()));
    std::vector<std::size_t> out_shape(a.shape());
    out_shape[axis] = len;
    const auto& av = a.data();
    std::vector<double> out(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, av.data() + (o * n + start) * inner, len * inner * sizeof(double));
    Tensor r = make_tensor(std::move(out_shape), std::move(out), false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra, outer, n, inner, start, len]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            auto& ga = ra.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < len * inner; ++i) ga[(o * n + start) * inner + i] += g[o * len * inner + i];
        });
    }
    return r;
}

Tensor reshape(const Tensor& a, const std::vector<std::size_t>& new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != a.size())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape) + " changes element count");
    Tensor r = make_tensor(new_shape, a.data(), false);
    if (track({a})) {
        Tensor ra = a;
        record(r, [r, ra]() mutable {
            if (!ra.requires_grad()) return;
            const auto& g = r.grad();
            auto& ga = ra.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return r;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding table must be rank 2");
    const std::size_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw ShapeError("embedding_rows with empty id list");
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ValueError("token id " + std::to_string(id) + " out of vocabulary range");
    const auto& tv = table.data();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out.data() + i * d, tv.data() + static_cast<std::size_t>(ids[i]) * d, d * sizeof(double));
    Tensor r = make_tensor({ids.size(), d}, std::move(out), false);
    if (track({table})) {
        Tensor rt = table;
        record(r, [r, rt, ids, d]() mutable {
            if (!rt.requires_grad()) return;
            const auto& g = r.grad();
            auto& gt = rt.grad_buffer();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
        });
    }
    return r;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects [N x V] logits");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n) throw ShapeError("cross_entropy target count mismatch");
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= v) throw ValueError("target id out of range");
    const auto& lv = logits.data();
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = lv.data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            (*probs)[i * v + j] = std::exp(row[j] - mx);
            denom += (*probs)[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] /= denom;
        loss -= std::log((*probs)[i * v + static_cast<std::size_t>(targets[i])]);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy produced non-finite loss");
    Tensor r = make_tensor({1}, {loss}, false);
    if (track({logits})) {
        Tensor rl = logits;
        record(r, [r, rl, probs, targets, n, v]() mutable {
            if (!rl.requires_grad()) return;
            const double g = r.grad()[0];
            auto& gl = rl.grad_buffer();
            const double invn = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < v; ++j) {
                    double p = (*probs)[i * v + j];
                    double y = (static_cast<std::size_t>(targets[i]) == j) ? 1.0 : 0.0;
                    gl[i * v + j] += g * invn * (p - y);
                }
        });
    }
    return r;
}

// ---- conv / padding ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
    if (x.rank() != 3 || w.rank() != 4)
        throw ShapeError("conv2d expects x:[C x H x W] w:[O x C x K x K], got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
    const std::size_t cin = x.dim(0), h = x.dim(1), wid = x.dim(2);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) throw ShapeError("conv2d channel mismatch");
    if (b.size() != cout) throw ShapeError("conv2d bias length mismatch");
    if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
    if (h + 2 * pad < k || wid + 2 * pad < k) throw ShapeError("conv2d kernel larger than padded input");
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (wid + 2 * pad - k) / stride + 1;

    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = b.data();
    std::vector<double> out(cout * oh * ow);
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double s = bv[oc];
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wid)) continue;
                            s += xv[(ic * h + iy) * wid + ix] * wv[((oc * cin + ic) * k + ky) * k + kx];
                        }
                    }
                out[(oc * oh + oy) * ow + ox] = s;
            }
    Tensor r = make_tensor({cout, oh, ow}, std::move(out), false);
    debug_check_finite(r, "conv2d");
    if (track({x, w, b})) {
        Tensor rx = x, rw = w, rb = b;
        record(r, [r, rx, rw, rb, cin, h, wid, cout, k, stride, pad, oh, ow]() mutable {
            const auto& g = r.grad();
            const auto& xv2 = rx.data();
            const auto& wv2 = rw.data();
            for (std::size_t oc = 0; oc < cout; ++oc)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double go = g[(oc * oh + oy) * ow + ox];
                        if (go == 0.0) continue;
                        if (rb.requires_grad()) rb.grad_buffer()[oc] += go;
                        for (std::size_t ic = 0; ic < cin; ++ic)
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                              static_cast<std::ptrdiff_t>(pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wid)) continue;
                                    const std::size_t xi = (ic * h + iy) * wid + ix;
                                    const std::size_t wi = ((oc * cin + ic) * k + ky) * k + kx;
                                    if (rx.requires_grad()) rx.grad_buffer()[xi] += go * wv2[wi];
                                    if (rw.requires_grad()) rw.grad_buffer()[wi] += go * xv2[xi];
                                }
                            }
                    }
        });
    }
    return r;
}

Tensor pad2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw ShapeError("pad2d expects [C x H x W], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h < h || out_w < w) throw ShapeError("pad2d cannot shrink the input");
    const auto& xv = x.data();
    std::vector<double> out(c * out_h * out_w, 0.0);
    for (std::size_t ic = 0; ic < c; ++ic)
        for (std::size_t y = 0; y < h; ++y)
            std::memcpy(out.data() + (ic * out_h + y) * out_w, xv.data() + (ic * h + y) * w, w * sizeof(double));
    Tensor r = make_tensor({c, out_h, out_w}, std::move(out), false);
    if (track({x})) {
        Tensor rx = x;
        record(r, [r, rx, c, h, w, out_h, out_w]() mutable {
            if (!rx.requires_grad()) return;
            const auto& g = r.grad();
            auto& gx = rx.grad_buffer();
            for (std::size_t ic = 0; ic < c; ++ic)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        gx[(ic * h + y) * w + xx] += g[(ic * out_h + y) * out_w + xx];
        });
    }
    return r;
}

// ---- fused multi-head attention core ----

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale_factor,
                      bool causal) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention_core expects rank-2 q/k/v, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    const std::size_t lq = q.dim(0), d = q.dim(1);
    const std::size_t lkv = k.dim(0);
    if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lkv)
        throw ShapeError("attention_core q/k/v dims mismatch: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                         ", " + shape_str(v.shape()));
    if (heads == 0 || d % heads != 0)
        throw ShapeError("attention_core head count must divide the model width");
    if (causal && lq != lkv) throw ShapeError("causal attention_core requires matching query/key lengths");
    const std::size_t dh = d / heads;

    const auto& qv = q.data();
    const auto& kv = k.data();
    const auto& vv = v.data();
    // Softmax weights per head, kept for the backward pass.
    auto weights = std::make_shared<std::vector<double>>(heads * lq * lkv);
    std::vector<double> out(lq * d, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t hs = h * dh;
        double* w = weights->data() + h * lq * lkv;
        for (std::size_t i = 0; i < lq; ++i) {
            double* wi = w + i * lkv;
            for (std::size_t j = 0; j < lkv; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += qv[i * d + hs + e] * kv[j * d + hs + e];
                s *= scale_factor;
                if (causal && j > i) s += -1e9;
                wi[j] = s;
            }
            double mx = wi[0];
            for (std::size_t j = 1; j < lkv; ++j) mx = std::max(mx, wi[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < lkv; ++j) {
                wi[j] = std::exp(wi[j] - mx);
                denom += wi[j];
            }
            for (std::size_t j = 0; j < lkv; ++j) wi[j] /= denom;
            for (std::size_t j = 0; j < lkv; ++j) {
                const double wij = wi[j];
                if (wij == 0.0) continue;
                for (std::size_t e = 0; e < dh; ++e) out[i * d + hs + e] += wij * vv[j * d + hs + e];
            }
        }
    }
    Tensor r = make_tensor({lq, d}, std::move(out), false);
    debug_check_finite(r, "attention_core");
    if (track({q, k, v})) {
        Tensor rq = q, rk = k, rv = v;
        record(r, [r, rq, rk, rv, weights, heads, lq, lkv, d, dh, scale_factor]() mutable {
            const auto& g = r.grad();
            const auto& qv2 = rq.data();
            const auto& kv2 = rk.data();
            const auto& vv2 = rv.data();
            std::vector<double> dw(lkv);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t hs = h * dh;
                const double* w = weights->data() + h * lq * lkv;
                for (std::size_t i = 0; i < lq; ++i) {
                    const double* wi = w + i * lkv;
                    const double* gi = g.data() + i * d + hs;
                    if (rv.requires_grad()) {
                        auto& gv = rv.grad_buffer();
                        for (std::size_t j = 0; j < lkv; ++j) {
                            const double wij = wi[j];
                            if (wij == 0.0) continue;
                            for (std::size_t e = 0; e < dh; ++e) gv[j * d + hs + e] += wij * gi[e];
                        }
                    }
                    if (!rq.requires_grad() && !rk.requires_grad()) continue;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < lkv; ++j) {
                        double s = 0.0;
                        for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vv2[j * d + hs + e];
                        dw[j] = s;
                        dot += wi[j] * s;
                    }
                    for (std::size_t j = 0; j < lkv; ++j) {
                        const double ds = wi[j] * (dw[j] - dot) * scale_factor;
                        if (ds == 0.0) continue;
                        if (rq.requires_grad()) {
                            auto& gq = rq.grad_buffer();
                            for (std::size_t e = 0; e < dh; ++e) gq[i * d + hs + e] += ds * kv2[j * d + hs + e];
                        }
                        if (rk.requires_grad()) {
                            auto& gk = rk.grad_buffer();
                            for (std::size_t e = 0; e < dh; ++e) gk[j * d + hs + e] += ds * qv2[i * d + hs + e];
                        }
                    }
                }
            }
        });
    }
    return r;
}

// ---- gradient check ----

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor x1 = make_tensor(x.shape(), x.data());
    x1.set_requires_grad(true);
    Tape tape;
    double value;
    {
        Tape::Scope scope(tape);
        Tensor y = f(x1);
        if (y.size() != 1) throw TensorError("grad_check requires a scalar-valued function");
        value = y.item();
        tape.backward(y);
    }
    {
        Tensor x2 = make_tensor(x.shape(), x.data());
        x2.set_requires_grad(true);
        Tape tape2;
        Tape::Scope scope(tape2);
        double v2 = f(x2).item();
        if (v2 != value) throw TensorError("grad_check: f is not deterministic");
    }
    std::vector<double> analytic = x1.has_grad() ? x1.grad() : std::vector<double>(x.size(), 0.0);

    Tensor probe = make_tensor(x.shape(), x.data());
    auto& pv = probe.mutable_data();
    double max_err = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double orig = pv[i];
        pv[i] = orig + h;
        double fp = f(probe).item();
        pv[i] = orig - h;
        double fm = f(probe).item();
        pv[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

// ---- serialization ----

namespace {
constexpr char kMagic[4] = {'D', 'T', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void push_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

template <typename T>
T read_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}
}  // namespace

void write_tensor_blob(const Tensor& t, std::vector<std::uint8_t>& out) {
    out.insert(out.end(), kMagic, kMagic + 4);
    push_le<std::uint32_t>(out, kVersion);
    push_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) push_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        push_le<std::uint64_t>(out, bits);
    }
}

Tensor read_tensor_blob(const std::uint8_t* data, std::size_t len, std::size_t* consumed) {
    if (len < 12 || std::memcmp(data, kMagic, 4) != 0) throw ValueError("bad tensor blob magic");
    if (read_le<std::uint32_t>(data + 4) != kVersion) throw ValueError("unsupported tensor blob version");
    const std::uint32_t rank = read_le<std::uint32_t>(data + 8);
    std::size_t off = 12;
    if (len < off + 8ull * rank) throw ValueError("truncated tensor blob header");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<std::size_t>(read_le<std::uint64_t>(data + off));
        n *= shape[i];
        off += 8;
    }
    if (len < off + 8 * n) throw ValueError("truncated tensor blob payload");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = read_le<std::uint64_t>(data + off);
        std::memcpy(&values[i], &bits, sizeof(double));
        off += 8;
    }
    if (consumed) *consumed = off;
    return make_tensor(std::move(shape), std::move(values));
}

void save_tensor(const Tensor& t, const std::string& path) {
    std::vector<std::uint8_t> blob;
    write_tensor_blob(t, blob);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw TensorError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TensorError("cannot open " + path);
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_tensor_blob(blob.data(), blob.size(), nullptr);
}

}  // namespace dolphin
