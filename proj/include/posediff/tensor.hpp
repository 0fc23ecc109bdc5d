#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "posediff/common.hpp"
#include "posediff/rng.hpp"

// Minimal dense-tensor math with reverse-mode differentiation.
// Tensors are rank-1 or rank-2 row-major arrays of doubles; a Tensor is a
// shared handle to a graph node. Ops record backward closures; backward()
// runs reverse topological order and accumulates into .grad additively.

namespace posediff::ad {

class Tensor;

namespace detail {
struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily, empty until touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return n_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return n_->value; }
    std::span<const double> data() const { return n_->value; }
    std::span<double> grad();
    std::span<const double> grad() const;
    bool has_grad() const { return n_ && !n_->grad.empty(); }
    bool requires_grad() const { return n_->requires_grad; }

    double item() const;

    // Runs reverse-mode accumulation from this scalar node.
    void backward() const;
    void zero_grad();

    detail::Node* node() const { return n_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;

    friend Tensor make_op(std::vector<std::size_t> shape,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backprop);
};

Tensor make_op(std::vector<std::size_t> shape, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop);

// ---- layer and elementwise primitives ----

// y[i,j] = sum_k x[i,k] W[k,j] + b[j]
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);

// Column-wise max over rows; backward routes to the first argmax row.
Tensor max_pool_rows(const Tensor& x);
// Same, applied independently to consecutive row blocks of length seg.
Tensor segment_max_pool(const Tensor& x, std::size_t seg);

Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row-wise helpers for [B x F] matrices.
Tensor row_dot(const Tensor& a, const Tensor& b);      // -> [B x 1]
Tensor row_scale(const Tensor& x, const Tensor& s);    // s: [B x 1]
Tensor row_cross(const Tensor& a, const Tensor& b);    // F == 3

Tensor rsqrt(const Tensor& x);
// acos with the argument clamped to [-1 + eps, 1 - eps]; gradient is zero in
// the clamped region.
Tensor acos_clamped(const Tensor& x, double eps = 1e-7);

// ---- parameters, optimizer, schedule ----

class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    std::size_t size() const { return params_.size(); }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();

    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

    // Copies values (not graph edges) from another store with matching names.
    void load_values_from(const ParamStore& other);

private:
    std::map<std::string, Tensor> params_;  // sorted iteration order
};

struct AdamState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void save(const std::string& path) const;  // conventionally "<ckpt>.opt"
    static AdamState load(const std::string& path);
};

// Standard Adam with bias correction; grads are left untouched.
void adam_step(ParamStore& params, AdamState& state, double lr);

// Linear warm-up to base_lr, then stepwise exponential decay.
double lr_at(std::uint64_t step, double base_lr, std::uint64_t warmup_steps,
             double decay_rate, std::uint64_t decay_every);

// Gaussian init helper (deterministic under rng).
Tensor randn(std::vector<std::size_t> shape, double stddev, Rng& rng,
             bool requires_grad = true);

}  // namespace posediff::ad
