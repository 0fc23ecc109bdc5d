#include "posediff/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace posediff::ad {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void check_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2)
        throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " +
                             shape_str(t.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

bool any_requires(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != data.size())
        throw DimensionError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(n) + " values, got " + std::to_string(data.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

std::size_t Tensor::rows() const { return n_->shape.empty() ? 1 : n_->shape[0]; }
std::size_t Tensor::cols() const {
    if (n_->shape.size() == 2) return n_->shape[1];
    if (n_->shape.size() == 1) return n_->shape[0];
    return 1;
}

std::span<double> Tensor::grad() {
    n_->ensure_grad();
    return n_->grad;
}

std::span<const double> Tensor::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->value[0];
}

void Tensor::zero_grad() {
    if (n_) n_->grad.assign(n_->value.size(), 0.0);
}

Tensor make_op(std::vector<std::size_t> shape, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value.resize(n);
    node->requires_grad = any_requires(parents);
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.n_);
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (numel() != 1) throw ContractError("backward(): loss must be scalar, got " + shape_str(shape()));
    // Iterative post-order topological sort.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    n_->ensure_grad();
    n_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

// ---- ops ----

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    check_rank2(x, "linear(x)");
    check_rank2(W, "linear(W)");
    const std::size_t B = x.rows(), I = x.cols(), O = W.cols();
    if (W.rows() != I)
        throw DimensionError("linear: inner dimensions differ, x " + shape_str(x.shape()) +
                             " vs W " + shape_str(W.shape()));
    if (b.numel() != O)
        throw DimensionError("linear: bias length " + std::to_string(b.numel()) +
                             " does not match output width " + std::to_string(O));
    Tensor y = make_op({B, O}, {x, W, b}, [B, I, O](detail::Node& n) {
        auto& xs = *n.parents[0];
        auto& ws = *n.parents[1];
        auto& bs = *n.parents[2];
        CMatMap gy(n.grad.data(), B, O);
        if (xs.requires_grad) {
            xs.ensure_grad();
            MatMap gx(xs.grad.data(), B, I);
            CMatMap wv(ws.value.data(), I, O);
            gx.noalias() += gy * wv.transpose();
        }
        if (ws.requires_grad) {
            ws.ensure_grad();
            MatMap gw(ws.grad.data(), I, O);
            CMatMap xv(xs.value.data(), B, I);
            gw.noalias() += xv.transpose() * gy;
        }
        if (bs.requires_grad) {
            bs.ensure_grad();
            Eigen::Map<Eigen::RowVectorXd>(bs.grad.data(), O) += gy.colwise().sum();
        }
    });
    if (B > 0) {
        MatMap yv(y.data().data(), B, O);
        CMatMap xv(x.data().data(), B, I);
        CMatMap wv(W.data().data(), I, O);
        yv.noalias() = xv * wv;
        yv.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), O);
    }
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul(a)");
    check_rank2(b, "matmul(b)");
    const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
    if (b.rows() != K)
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor y = make_op({M, N}, {a, b}, [M, K, N](detail::Node& n) {
        auto& as = *n.parents[0];
        auto& bs = *n.parents[1];
        CMatMap gy(n.grad.data(), M, N);
        if (as.requires_grad) {
            as.ensure_grad();
            MatMap ga(as.grad.data(), M, K);
            CMatMap bv(bs.value.data(), K, N);
            ga.noalias() += gy * bv.transpose();
        }
        if (bs.requires_grad) {
            bs.ensure_grad();
            MatMap gb(bs.grad.data(), K, N);
            CMatMap av(as.value.data(), M, K);
            gb.noalias() += av.transpose() * gy;
        }
    });
    if (M > 0 && N > 0) {
        MatMap yv(y.data().data(), M, N);
        CMatMap av(a.data().data(), M, K);
        CMatMap bv(b.data().data(), K, N);
        yv.noalias() = av * bv;
    }
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y = make_op(x.shape(), {x}, [](detail::Node& n) {
        auto& xs = *n.parents[0];
        if (!xs.requires_grad) return;
        xs.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i)
            if (n.value[i] > 0.0) xs.grad[i] += n.grad[i];
    });
    const auto xv = x.data();
    auto yv = y.data();
    for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return y;
}

Tensor segment_max_pool(const Tensor& x, std::size_t seg) {
    check_rank2(x, "segment_max_pool");
    const std::size_t R = x.rows(), F = x.cols();
    if (R == 0) throw EmptyInputError("segment_max_pool: empty input");
    if (seg == 0 || R % seg != 0)
        throw DimensionError("segment_max_pool: rows " + std::to_string(R) +
                             " not divisible by segment " + std::to_string(seg));
    const std::size_t B = R / seg;
    // argmax (first winner) per segment/column, shared with backward
    auto argmax = std::make_shared<std::vector<std::size_t>>(B * F);
    Tensor y = make_op({B, F}, {x}, [argmax, F](detail::Node& n) {
        auto& xs = *n.parents[0];
        if (!xs.requires_grad) return;
        xs.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            xs.grad[(*argmax)[i] * F + i % F] += n.grad[i];
    });
    const auto xv = x.data();
    auto yv = y.data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < F; ++j) {
            std::size_t best = b * seg;
            double bv = xv[best * F + j];
            for (std::size_t r = 1; r < seg; ++r) {
                const double v = xv[(b * seg + r) * F + j];
                if (v > bv) {
                    bv = v;
                    best = b * seg + r;
                }
            }
            yv[b * F + j] = bv;
            (*argmax)[b * F + j] = best;
        }
    }
    return y;
}

Tensor max_pool_rows(const Tensor& x) {
    check_rank2(x, "max_pool_rows");
    if (x.rows() == 0) throw EmptyInputError("max_pool_rows: zero rows");
    Tensor pooled = segment_max_pool(x, x.rows());  // [1 x F]
    const std::size_t F = x.cols();
    Tensor y = make_op({F}, {pooled}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
    std::copy(pooled.data().begin(), pooled.data().end(), y.data().begin());
    return y;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw EmptyInputError("concat_cols: no inputs");
    const std::size_t B = xs[0].rows();
    std::size_t F = 0;
    for (const auto& t : xs) {
        check_rank2(t, "concat_cols");
        if (t.rows() != B)
            throw DimensionError("concat_cols: row mismatch " + shape_str(t.shape()));
        F += t.cols();
    }
    auto widths = std::make_shared<std::vector<std::size_t>>();
    for (const auto& t : xs) widths->push_back(t.cols());
    Tensor y = make_op({B, F}, xs, [widths, B, F](detail::Node& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            auto& p = *n.parents[k];
            const std::size_t w = (*widths)[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        p.grad[i * w + j] += n.grad[i * F + off + j];
            }
            off += w;
        }
    });
    std::size_t off = 0;
    for (const auto& t : xs) {
        const std::size_t w = t.cols();
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < w; ++j) y.data()[i * F + off + j] = t.data()[i * w + j];
        off += w;
    }
    return y;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    check_rank2(x, "slice_cols");
    const std::size_t B = x.rows(), F = x.cols();
    if (c0 >= c1 || c1 > F)
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") out of " + std::to_string(F) + " columns");
    const std::size_t W = c1 - c0;
    Tensor y = make_op({B, W}, {x}, [B, F, W, c0](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < W; ++j) p.grad[i * F + c0 + j] += n.grad[i * W + j];
    });
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < W; ++j) y.data()[i * W + j] = x.data()[i * F + c0 + j];
    return y;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    Tensor y = make_op(a.shape(), {a, b}, [bwd](detail::Node& n) {
        auto& as = *n.parents[0];
        auto& bs = *n.parents[1];
        if (as.requires_grad) as.ensure_grad();
        if (bs.requires_grad) bs.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i)
            bwd(n.grad[i], as, bs, i);
    });
    for (std::size_t i = 0; i < a.numel(); ++i) y.data()[i] = fwd(a.data()[i], b.data()[i]);
    return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, detail::Node& as, detail::Node& bs, std::size_t i) {
            if (as.requires_grad) as.grad[i] += g;
            if (bs.requires_grad) bs.grad[i] += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, detail::Node& as, detail::Node& bs, std::size_t i) {
            if (as.requires_grad) as.grad[i] += g;
            if (bs.requires_grad) bs.grad[i] -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, detail::Node& as, detail::Node& bs, std::size_t i) {
            if (as.requires_grad) as.grad[i] += g * bs.value[i];
            if (bs.requires_grad) bs.grad[i] += g * as.value[i];
        });
}

Tensor scale(const Tensor& x, double c) {
    Tensor y = make_op(x.shape(), {x}, [c](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i) p.grad[i] += c * n.grad[i];
    });
    for (std::size_t i = 0; i < x.numel(); ++i) y.data()[i] = c * x.data()[i];
    return y;
}

Tensor add_const(const Tensor& x, double c) {
    Tensor y = make_op(x.shape(), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i) p.grad[i] += n.grad[i];
    });
    for (std::size_t i = 0; i < x.numel(); ++i) y.data()[i] = x.data()[i] + c;
    return y;
}

Tensor sum(const Tensor& x) {
    Tensor y = make_op({1}, {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += n.grad[0];
    });
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    y.data()[0] = acc;
    return y;
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw EmptyInputError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "row_dot");
    check_rank2(a, "row_dot");
    const std::size_t B = a.rows(), F = a.cols();
    Tensor y = make_op({B, 1}, {a, b}, [B, F](detail::Node& n) {
        auto& as = *n.parents[0];
        auto& bs = *n.parents[1];
        if (as.requires_grad) as.ensure_grad();
        if (bs.requires_grad) bs.ensure_grad();
        for (std::size_t i = 0; i < B; ++i) {
            const double g = n.grad[i];
            for (std::size_t j = 0; j < F; ++j) {
                if (as.requires_grad) as.grad[i * F + j] += g * bs.value[i * F + j];
                if (bs.requires_grad) bs.grad[i * F + j] += g * as.value[i * F + j];
            }
        }
    });
    for (std::size_t i = 0; i < B; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < F; ++j) acc += a.data()[i * F + j] * b.data()[i * F + j];
        y.data()[i] = acc;
    }
    return y;
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
    check_rank2(x, "row_scale");
    const std::size_t B = x.rows(), F = x.cols();
    if (s.rows() != B || s.cols() != 1)
        throw DimensionError("row_scale: scale must be [" + std::to_string(B) + "x1], got " +
                             shape_str(s.shape()));
    Tensor y = make_op({B, F}, {x, s}, [B, F](detail::Node& n) {
        auto& xs = *n.parents[0];
        auto& ss = *n.parents[1];
        if (xs.requires_grad) xs.ensure_grad();
        if (ss.requires_grad) ss.ensure_grad();
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < F; ++j) {
                const double g = n.grad[i * F + j];
                if (xs.requires_grad) xs.grad[i * F + j] += g * ss.value[i];
                if (ss.requires_grad) ss.grad[i] += g * xs.value[i * F + j];
            }
        }
    });
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < F; ++j) y.data()[i * F + j] = x.data()[i * F + j] * s.data()[i];
    return y;
}

Tensor row_cross(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "row_cross");
    if (a.cols() != 3) throw DimensionError("row_cross: needs three columns, got " + shape_str(a.shape()));
    const std::size_t B = a.rows();
    Tensor y = make_op({B, 3}, {a, b}, [B](detail::Node& n) {
        auto& as = *n.parents[0];
        auto& bs = *n.parents[1];
        if (as.requires_grad) as.ensure_grad();
        if (bs.requires_grad) bs.ensure_grad();
        for (std::size_t i = 0; i < B; ++i) {
            const double* av = &as.value[i * 3];
            const double* bv = &bs.value[i * 3];
            const double* g = &n.grad[i * 3];
            if (as.requires_grad) {
                // d(a x b)/da^T applied to g: g x b ... with sign from the
                // skew structure: grad_a = b x g? verify: y0 = a1 b2 - a2 b1
                as.grad[i * 3 + 0] += g[1] * (-bv[2]) + g[2] * bv[1];
                as.grad[i * 3 + 1] += g[0] * bv[2] + g[2] * (-bv[0]);
                as.grad[i * 3 + 2] += g[0] * (-bv[1]) + g[1] * bv[0];
            }
            if (bs.requires_grad) {
                bs.grad[i * 3 + 0] += g[1] * av[2] + g[2] * (-av[1]);
                bs.grad[i * 3 + 1] += g[0] * (-av[2]) + g[2] * av[0];
                bs.grad[i * 3 + 2] += g[0] * av[1] + g[1] * (-av[0]);
            }
        }
    });
    for (std::size_t i = 0; i < B; ++i) {
        const double* av = &a.data()[i * 3];
        const double* bv = &b.data()[i * 3];
        y.data()[i * 3 + 0] = av[1] * bv[2] - av[2] * bv[1];
        y.data()[i * 3 + 1] = av[2] * bv[0] - av[0] * bv[2];
        y.data()[i * 3 + 2] = av[0] * bv[1] - av[1] * bv[0];
    }
    return y;
}

Tensor rsqrt(const Tensor& x) {
    Tensor y = make_op(x.shape(), {x}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            const double r = n.value[i];  // x^-1/2
            p.grad[i] += n.grad[i] * (-0.5 * r * r * r);
        }
    });
    for (std::size_t i = 0; i < x.numel(); ++i) y.data()[i] = 1.0 / std::sqrt(x.data()[i]);
    return y;
}

Tensor acos_clamped(const Tensor& x, double eps) {
    const double lo = -1.0 + eps, hi = 1.0 - eps;
    auto mask = std::make_shared<std::vector<unsigned char>>(x.numel());
    Tensor y = make_op(x.shape(), {x}, [mask](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            if (!(*mask)[i]) continue;
            const double c = std::cos(n.value[i]);
            p.grad[i] += n.grad[i] * (-1.0 / std::sqrt(1.0 - c * c));
        }
    });
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double u = x.data()[i];
        const bool interior = u > lo && u < hi;
        u = std::min(hi, std::max(lo, u));
        (*mask)[i] = interior ? 1 : 0;
        y.data()[i] = std::acos(u);
    }
    return y;
}

// ---- ParamStore ----

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    auto [it, fresh] = params_.emplace(name, std::move(t));
    if (!fresh) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::load_values_from(const ParamStore& other) {
    for (auto& [name, t] : params_) {
        if (!other.contains(name)) continue;
        const Tensor& src = other.at(name);
        if (src.shape() != t.shape())
            throw DimensionError("load_values_from: shape mismatch for '" + name + "'");
        std::copy(src.data().begin(), src.data().end(), t.data().begin());
    }
}

// ---- checkpoint io (PDLCKPT1) ----

namespace {

constexpr char kCkptMagic[8] = {'P', 'D', 'L', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

struct Reader {
    std::string buf;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated at byte offset " + std::to_string(pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

Reader read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open");
    Reader r;
    r.path = path;
    r.buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError(path + ": write failed");
}

void append_record(std::string& buf, const std::string& name, const std::vector<std::size_t>& shape,
                   const std::vector<double>& data) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u64(buf, d);
    for (double v : data) put_f64(buf, v);
}

struct RawRecord {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

std::vector<RawRecord> read_records(Reader& r) {
    if (r.bytes(8) != std::string(kCkptMagic, 8))
        throw FormatError(r.path + ": bad magic at byte offset 0");
    const std::uint64_t count = r.u64();
    std::vector<RawRecord> recs(count);
    for (auto& rec : recs) {
        const std::uint32_t nlen = r.u32();
        rec.name = r.bytes(nlen);
        const std::uint32_t rank = r.u32();
        rec.shape.resize(rank);
        std::size_t n = 1;
        for (auto& d : rec.shape) {
            d = r.u64();
            n *= d;
        }
        rec.data.resize(n);
        for (auto& v : rec.data) v = r.f64();
    }
    return recs;
}

}  // namespace

void ParamStore::save(const std::string& path) const {
    std::string buf(kCkptMagic, 8);
    put_u64(buf, params_.size());
    for (const auto& [name, t] : params_)
        append_record(buf, name, t.shape(), {t.data().begin(), t.data().end()});
    write_file(path, buf);
}

ParamStore ParamStore::load(const std::string& path) {
    Reader r = read_file(path);
    ParamStore ps;
    for (auto& rec : read_records(r))
        ps.add(rec.name, Tensor::from_data(rec.shape, std::move(rec.data), /*requires_grad=*/true));
    return ps;
}

void AdamState::save(const std::string& path) const {
    std::string buf(kCkptMagic, 8);
    put_u64(buf, moments.size() * 2 + 4);
    for (const auto& [name, mm] : moments) {
        append_record(buf, name + "#m", {mm.m.size()}, mm.m);
        append_record(buf, name + "#v", {mm.v.size()}, mm.v);
    }
    append_record(buf, "__step__", {1}, {static_cast<double>(step)});
    append_record(buf, "__beta1__", {1}, {beta1});
    append_record(buf, "__beta2__", {1}, {beta2});
    append_record(buf, "__eps__", {1}, {eps});
    write_file(path, buf);
}

AdamState AdamState::load(const std::string& path) {
    Reader r = read_file(path);
    AdamState st;
    for (auto& rec : read_records(r)) {
        if (rec.name == "__step__") {
            st.step = static_cast<std::uint64_t>(rec.data.at(0));
        } else if (rec.name == "__beta1__") {
            st.beta1 = rec.data.at(0);
        } else if (rec.name == "__beta2__") {
            st.beta2 = rec.data.at(0);
        } else if (rec.name == "__eps__") {
            st.eps = rec.data.at(0);
        } else if (rec.name.size() > 2 && rec.name.substr(rec.name.size() - 2) == "#m") {
            st.moments[rec.name.substr(0, rec.name.size() - 2)].m = std::move(rec.data);
        } else if (rec.name.size() > 2 && rec.name.substr(rec.name.size() - 2) == "#v") {
            st.moments[rec.name.substr(0, rec.name.size() - 2)].v = std::move(rec.data);
        } else {
            throw FormatError(path + ": unexpected optimizer record '" + rec.name + "'");
        }
    }
    return st;
}

void adam_step(ParamStore& params, AdamState& state, double lr) {
    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (auto& [name, t] : params) {
        if (!t.has_grad())
            throw ContractError("adam_step: parameter '" + name + "' has no gradient");
        auto& mm = state.moments[name];
        const std::size_t n = t.numel();
        if (mm.m.size() != n) mm.m.assign(n, 0.0);
        if (mm.v.size() != n) mm.v.assign(n, 0.0);
        auto pv = t.data();
        auto gv = t.grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = gv[i];
            mm.m[i] = b1 * mm.m[i] + (1.0 - b1) * g;
            mm.v[i] = b2 * mm.v[i] + (1.0 - b2) * g * g;
            const double mhat = mm.m[i] / bc1;
            const double vhat = mm.v[i] / bc2;
            pv[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double lr_at(std::uint64_t step, double base_lr, std::uint64_t warmup_steps, double decay_rate,
             std::uint64_t decay_every) {
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const std::uint64_t k = (step - warmup_steps) / decay_every;
    return base_lr * std::pow(decay_rate, static_cast<double>(k));
}

Tensor randn(std::vector<std::size_t> shape, double stddev, Rng& rng, bool requires_grad) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> data(n);
    for (auto& v : data) v = stddev * rng.normal();
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace posediff::ad
