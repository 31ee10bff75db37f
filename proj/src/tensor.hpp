#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dolphin {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : TensorError {
    using TensorError::TensorError;
};
struct ValueError : TensorError {
    using TensorError::TensorError;
};
struct NumericError : TensorError {
    using TensorError::TensorError;
};

std::string shape_str(const std::vector<std::size_t>& shape);

/// Dense row-major f64 tensor. Storage is shared; copies are views of the
/// same buffer. Contents are treated as immutable once an op has consumed
/// them, except for parameter updates applied outside any tape.
class Tensor {
public:
    struct Impl {
        std::vector<std::size_t> shape;
        std::vector<double> value;
        std::vector<double> grad;  // allocated iff requires_grad
        bool requires_grad = false;
    };

    Tensor() = default;

    static Tensor zeros(const std::vector<std::size_t>& shape);
    static Tensor ones(const std::vector<std::size_t>& shape);
    // Deterministic Box-Muller over mt19937_64: identical bits for identical
    // (shape, seed, std) on a given platform.
    static Tensor randn(const std::vector<std::size_t>& shape, std::uint64_t seed, double std_dev = 1.0);
    static Tensor from_data(const std::vector<std::size_t>& shape, std::vector<double> data);
    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->value.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

    const std::vector<double>& data() const { return impl_->value; }
    std::vector<double>& mutable_data() { return impl_->value; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    bool has_grad() const { return impl_->requires_grad && !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_buffer();  // allocates zeros on first use
    void zero_grad();

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<Impl> impl_;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    static Tensor make(std::vector<std::size_t> shape, std::vector<double> data, bool check_finite = true);
    friend Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data, bool check_finite);
};

Tensor make_tensor(std::vector<std::size_t> shape, std::vector<double> data, bool check_finite = true);

/// Reverse-mode tape. Ops record onto the innermost active scope; recording
/// order is the topological order, and backward walks it once in reverse.
class Tape {
public:
    struct Node {
        Tensor output;
        std::function<void()> pull;  // accumulate output grad into inputs
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(Tensor output, std::function<void()> pull);
    void backward(const Tensor& loss);
    void clear() { nodes_.clear(); }
    std::size_t node_count() const { return nodes_.size(); }

    static Tape* current();

    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

private:
    std::vector<Node> nodes_;
};

// ---- primitive ops (all tape-recorded when a scope is active) ----

Tensor add(const Tensor& a, const Tensor& b);   // b's shape == a's or a suffix of it
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise, same suffix-broadcast rule
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // a: [..,m,k], b: [k,n]
Tensor transpose2d(const Tensor& a);
Tensor gelu(const Tensor& a);                   // exact erf form
Tensor log_op(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);                // -> shape [1]
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& a, const std::vector<std::size_t>& new_shape);
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);  // mean over rows
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad);
/// Fused multi-head attention core over already-projected q/k/v [L x D]:
/// per head, softmax(q_h k_h^T * scale) v_h, heads re-concatenated. With
/// causal=true keys j > i are masked out (requires L_q == L_kv).
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale_factor,
                      bool causal);
Tensor pad2d(const Tensor& x, std::size_t out_h, std::size_t out_w);  // zero pad bottom/right

// ---- verification oracle ----

/// Central-difference gradient check of a scalar-valued function.
/// Returns the max relative error max|a-n| / max(|a|,|n|,1e-8).
/// Evaluates f twice at x and throws if the two values differ.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// ---- serialization ----

// Flat blob: magic "DTNS", version u32, rank u32, dims u64 each, then
// little-endian f64 payload.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);
void write_tensor_blob(const Tensor& t, std::vector<std::uint8_t>& out);
Tensor read_tensor_blob(const std::uint8_t* data, std::size_t len, std::size_t* consumed);

}  // namespace dolphin
