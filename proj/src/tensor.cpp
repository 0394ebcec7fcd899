#include "rgtrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace rgtrec::ad {

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ", ";
        }
        out << shape[i];
    }
    if (shape.size() == 1) {
        out << ',';
    }
    out << ')';
    return out.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(a.shape()));
    }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        shape_mismatch(op, a.shape(), b.shape());
    }
}

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) {
                continue;
            }
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{0};
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            crow[j] += acc;
        }
    }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T{0}) {
                continue;
            }
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
T softplus_value(T x) {
    return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid_value(T x) {
    if (x >= T{0}) {
        return T{1} / (T{1} + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T{1} + e);
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_size(shape)) + " values, got " + std::to_string(values.size()));
    }
    node_ = std::make_shared<Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    std::vector<T> values(shape_size(shape), T{0});
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> value, const char* op,
                             std::vector<Tensor> inputs, BackwardFn backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                        [](const Tensor& t) { return t.requires_grad(); });
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& input : inputs) {
            node->parents.push_back(input.node_);
        }
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

template <typename T>
std::size_t Tensor<T>::rows() const {
    return node_->shape.empty() ? 1 : node_->shape[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
    return node_->shape.size() >= 2 ? node_->shape[1] : 1;
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) {
        throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    }
    return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
    return node_->value.at(row * cols() + col);
}

// ---- tape -----------------------------------------------------------------

template <typename T>
ComputeTape<T> ComputeTape<T>::record(const Tensor<T>& loss) {
    ComputeTape tape;
    if (!loss.defined() || !loss.requires_grad()) {
        return tape;
    }
    // Iterative post-order DFS; a node is emitted after all of its parents.
    std::unordered_set<const Node<T>*> visited;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
    stack.emplace_back(loss.node_ptr(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto parent = node->parents[next++];
            if (parent->requires_grad && visited.insert(parent.get()).second) {
                stack.emplace_back(std::move(parent), 0);
            }
            continue;
        }
        tape.order_.push_back(node);
        stack.pop_back();
    }
    return tape;
}

template <typename T>
void ComputeTape<T>::replay() {
    if (order_.empty()) {
        return;
    }
    auto& root = *order_.back();
    root.grad_buffer().assign(root.value.size(), T{1});
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>& node = **it;
        if (node.backward && node.grad.size() == node.value.size()) {
            node.backward(node);
        }
    }
    for (const auto& node : order_) {
        if (!node->parents.empty()) {
            continue;
        }
        for (const T g : node->grad) {
            if (!std::isfinite(g)) {
                throw NumericError("backward: non-finite gradient in parameter '" +
                                   (node->name.empty() ? std::string("<unnamed>") : node->name) + "'");
            }
        }
    }
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("backward: loss does not depend on any parameter");
    }
    auto tape = ComputeTape<T>::record(loss);
    tape.replay();
    // Intermediate buffers are not needed after the replay.
    for (const auto& node : tape.nodes()) {
        if (!node->parents.empty()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// ---- primitives -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        shape_mismatch("matmul", a.shape(), b.shape());
    }
    std::vector<T> out(m * n, T{0});
    gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    return Tensor<T>::from_op({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            gemm_nt(self.grad.data(), pb.value.data(), pa.grad_buffer().data(), m, n, k);
        }
        if (pb.requires_grad) {
            gemm_tn(pa.value.data(), self.grad.data(), pb.grad_buffer().data(), k, m, n);
        }
    });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix("matmul_nt", a);
    require_matrix("matmul_nt", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        shape_mismatch("matmul_nt", a.shape(), b.shape());
    }
    std::vector<T> out(m * n, T{0});
    gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
    return Tensor<T>::from_op({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            // dA = dC · B
            gemm_nn(self.grad.data(), pb.value.data(), pa.grad_buffer().data(), m, n, k);
        }
        if (pb.requires_grad) {
            // dB = dCᵀ · A
            gemm_tn(self.grad.data(), pa.value.data(), pb.grad_buffer().data(), n, m, k);
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_matrix("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    const auto in = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = in[i * n + j];
        }
    }
    return Tensor<T>::from_op({n, m}, std::move(out), "transpose", {a}, [m, n](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[j * m + i];
            }
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    std::vector<T> out(a.size());
    std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::plus<>());
    return Tensor<T>::from_op(a.shape(), std::move(out), "add", {a, b}, [](Node<T>& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) {
                continue;
            }
            auto& g = parent->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    std::vector<T> out(a.size());
    std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::minus<>());
    return Tensor<T>::from_op(a.shape(), std::move(out), "sub", {a, b}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    std::vector<T> out(a.size());
    std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::multiplies<>());
    return Tensor<T>::from_op(a.shape(), std::move(out), "mul", {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * pb.value[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * pa.value[i];
            }
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.size());
    std::transform(a.values().begin(), a.values().end(), out.begin(), [factor](T x) { return x * factor; });
    return Tensor<T>::from_op(a.shape(), std::move(out), "scale", {a}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, std::vector<T> factors) {
    const std::size_t m = a.rows(), n = a.cols();
    if (factors.size() != m) {
        throw ShapeError("scale_rows: " + std::to_string(factors.size()) + " factors for shape " +
                         shape_string(a.shape()));
    }
    std::vector<T> out(a.size());
    const auto in = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = in[i * n + j] * factors[i];
        }
    }
    return Tensor<T>::from_op(a.shape(), std::move(out), "scale_rows", {a},
                              [m, n, factors = std::move(factors)](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t j = 0; j < n; ++j) {
                                          g[i * n + j] += self.grad[i * n + j] * factors[i];
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    const T total = std::accumulate(a.values().begin(), a.values().end(), T{0});
    return Tensor<T>::from_op({1}, {total}, "sum", {a}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& x : g) {
            x += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.size() == 0) {
        throw ShapeError("mean: empty tensor");
    }
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) {
        throw ShapeError("mean_rows: tensor has no rows");
    }
    std::vector<T> out(n, T{0});
    const auto in = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j] += in[i * n + j];
        }
    }
    const T inv = T{1} / static_cast<T>(m);
    for (auto& x : out) {
        x *= inv;
    }
    return Tensor<T>::from_op({1, n}, std::move(out), "mean_rows", {a}, [m, n, inv](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[j] * inv;
            }
        }
    });
}

template <typename T>
Tensor<T> square_sum(const Tensor<T>& a) {
    T total{0};
    for (const T x : a.values()) {
        total += x * x;
    }
    return Tensor<T>::from_op({1}, {total}, "square_sum", {a}, [](Node<T>& self) {
        auto& parent = *self.parents[0];
        auto& g = parent.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += T{2} * parent.value[i] * self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix("concat_cols", a);
    require_matrix("concat_cols", b);
    if (a.rows() != b.rows()) {
        shape_mismatch("concat_cols", a.shape(), b.shape());
    }
    const std::size_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.values().data() + i * na, na, out.data() + i * n);
        std::copy_n(b.values().data() + i * nb, nb, out.data() + i * n + na);
    }
    return Tensor<T>::from_op({m, n}, std::move(out), "concat_cols", {a, b}, [m, na, nb, n](Node<T>& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < na; ++j) {
                    g[i * na + j] += self.grad[i * n + j];
                }
            }
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < nb; ++j) {
                    g[i * nb + j] += self.grad[i * n + na + j];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    std::vector<std::size_t> starts;
    for (const auto& part : parts) {
        require_matrix("concat_rows", part);
        if (part.cols() != n) {
            shape_mismatch("concat_rows", parts.front().shape(), part.shape());
        }
        starts.push_back(m * n);
        m += part.rows();
    }
    std::vector<T> out;
    out.reserve(m * n);
    for (const auto& part : parts) {
        out.insert(out.end(), part.values().begin(), part.values().end());
    }
    return Tensor<T>::from_op({m, n}, std::move(out), "concat_rows", parts,
                              [starts = std::move(starts)](Node<T>& self) {
                                  for (std::size_t p = 0; p < self.parents.size(); ++p) {
                                      auto& parent = *self.parents[p];
                                      if (!parent.requires_grad) {
                                          continue;
                                      }
                                      auto& g = parent.grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) {
                                          g[i] += self.grad[starts[p] + i];
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::uint32_t> rows) {
    const std::size_t n = a.cols(), m = a.rows();
    std::vector<T> out(rows.size() * n);
    const auto in = a.values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m) {
            throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside shape " +
                                    shape_string(a.shape()));
        }
        std::copy_n(in.data() + rows[i] * n, n, out.data() + i * n);
    }
    const std::size_t count = rows.size();
    return Tensor<T>::from_op({count, n}, std::move(out), "gather_rows", {a},
                              [n, rows = std::move(rows)](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < rows.size(); ++i) {
                                      T* dst = g.data() + rows[i] * n;
                                      const T* src = self.grad.data() + i * n;
                                      for (std::size_t j = 0; j < n; ++j) {
                                          dst[j] += src[j];
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m > 0 && n == 0) {
        throw ShapeError("softmax_rows: empty row in shape " + shape_string(a.shape()));
    }
    std::vector<T> out(a.size());
    const auto in = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = in.data() + i * n;
        T* dst = out.data() + i * n;
        const T peak = *std::max_element(row, row + n);
        T total{0};
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(row[j] - peak);
            total += dst[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] /= total;
        }
    }
    return Tensor<T>::from_op(a.shape(), out, "softmax_rows", {a}, [m, n, out](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            const T* y = out.data() + i * n;
            const T* dy = self.grad.data() + i * n;
            T dot{0};
            for (std::size_t j = 0; j < n; ++j) {
                dot += dy[j] * y[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += y[j] * (dy[j] - dot);
            }
        }
    });
}

template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m > 0 && n == 0) {
        throw ShapeError("logsumexp_rows: empty row in shape " + shape_string(a.shape()));
    }
    std::vector<T> out(m);
    std::vector<T> probs(a.size());
    const auto in = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = in.data() + i * n;
        T* p = probs.data() + i * n;
        const T peak = *std::max_element(row, row + n);
        T total{0};
        for (std::size_t j = 0; j < n; ++j) {
            p[j] = std::exp(row[j] - peak);
            total += p[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            p[j] /= total;
        }
        out[i] = peak + std::log(total);
    }
    return Tensor<T>::from_op({m, 1}, std::move(out), "logsumexp_rows", {a},
                              [m, n, probs = std::move(probs)](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t j = 0; j < n; ++j) {
                                          g[i * n + j] += self.grad[i] * probs[i * n + j];
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> logsumexp_all(const Tensor<T>& a) {
    if (a.size() == 0) {
        throw ShapeError("logsumexp_all: empty tensor");
    }
    const auto in = a.values();
    const T peak = *std::max_element(in.begin(), in.end());
    std::vector<T> probs(a.size());
    T total{0};
    for (std::size_t i = 0; i < in.size(); ++i) {
        probs[i] = std::exp(in[i] - peak);
        total += probs[i];
    }
    for (auto& p : probs) {
        p /= total;
    }
    return Tensor<T>::from_op({1}, {peak + std::log(total)}, "logsumexp_all", {a},
                              [probs = std::move(probs)](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                      g[i] += self.grad[0] * probs[i];
                                  }
                              });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    std::transform(a.values().begin(), a.values().end(), out.begin(), softplus_value<T>);
    return Tensor<T>::from_op(a.shape(), std::move(out), "softplus", {a}, [](Node<T>& self) {
        auto& parent = *self.parents[0];
        auto& g = parent.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * sigmoid_value(parent.value[i]);
        }
    });
}

template <typename T>
Tensor<T> row_dot(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("row_dot", a, b);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m, T{0});
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        T acc{0};
        for (std::size_t j = 0; j < n; ++j) {
            acc += av[i * n + j] * bv[i * n + j];
        }
        out[i] = acc;
    }
    return Tensor<T>::from_op({m, 1}, std::move(out), "row_dot", {a, b}, [m, n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[i * n + j] += self.grad[i] * pb.value[i * n + j];
                }
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[i * n + j] += self.grad[i] * pa.value[i * n + j];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> row_cosine(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("row_cosine", a, b);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m, T{0});
    std::vector<T> norm_a(m), norm_b(m);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        T dot{0}, sa{0}, sb{0};
        for (std::size_t j = 0; j < n; ++j) {
            const T x = av[i * n + j], y = bv[i * n + j];
            dot += x * y;
            sa += x * x;
            sb += y * y;
        }
        norm_a[i] = std::sqrt(sa);
        norm_b[i] = std::sqrt(sb);
        if (norm_a[i] > T{0} && norm_b[i] > T{0}) {
            out[i] = dot / (norm_a[i] * norm_b[i]);
        }
    }
    std::vector<T> cosines = out;
    return Tensor<T>::from_op(
        {m, 1}, std::move(out), "row_cosine", {a, b},
        [m, n, norm_a = std::move(norm_a), norm_b = std::move(norm_b), cosines = std::move(cosines)](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            for (std::size_t i = 0; i < m; ++i) {
                const T na = norm_a[i], nb = norm_b[i];
                if (na == T{0} || nb == T{0}) {
                    continue;
                }
                const T g = self.grad[i];
                const T c = cosines[i];
                const T* x = pa.value.data() + i * n;
                const T* y = pb.value.data() + i * n;
                if (pa.requires_grad) {
                    T* dx = pa.grad_buffer().data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        dx[j] += g * (y[j] / (na * nb) - c * x[j] / (na * na));
                    }
                }
                if (pb.requires_grad) {
                    T* dy = pb.grad_buffer().data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        dy[j] += g * (x[j] / (na * nb) - c * y[j] / (nb * nb));
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> spmm(std::shared_ptr<const SparseMatrix<T>> m, const Tensor<T>& x) {
    require_matrix("spmm", x);
    if (m->cols != x.rows()) {
        shape_mismatch("spmm", Shape{m->rows, m->cols}, x.shape());
    }
    const std::size_t n = x.cols();
    std::vector<T> out(m->rows * n, T{0});
    const auto in = x.values();
    for (std::size_t r = 0; r < m->rows; ++r) {
        T* dst = out.data() + r * n;
        for (std::size_t e = m->offsets[r]; e < m->offsets[r + 1]; ++e) {
            const T w = m->values[e];
            const T* src = in.data() + static_cast<std::size_t>(m->indices[e]) * n;
            for (std::size_t j = 0; j < n; ++j) {
                dst[j] += w * src[j];
            }
        }
    }
    return Tensor<T>::from_op({m->rows, n}, std::move(out), "spmm", {x}, [m, n](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < m->rows; ++r) {
            const T* dy = self.grad.data() + r * n;
            for (std::size_t e = m->offsets[r]; e < m->offsets[r + 1]; ++e) {
                const T w = m->values[e];
                T* dx = g.data() + static_cast<std::size_t>(m->indices[e]) * n;
                for (std::size_t j = 0; j < n; ++j) {
                    dx[j] += w * dy[j];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> edge_head_dot(const Tensor<T>& q, const Tensor<T>& k, std::shared_ptr<const SegmentIndex> index,
                        std::size_t heads, T factor) {
    require_matrix("edge_head_dot", q);
    require_same_shape("edge_head_dot", q, k);
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0) {
        throw ShapeError("edge_head_dot: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    if (q.rows() != index->num_nodes) {
        throw ShapeError("edge_head_dot: index over " + std::to_string(index->num_nodes) +
                         " nodes, embeddings have shape " + shape_string(q.shape()));
    }
    const std::size_t dh = d / heads;
    const std::size_t entries = index->num_entries();
    std::vector<T> out(entries * heads);
    const auto qv = q.values();
    const auto kv = k.values();
    for (std::size_t e = 0; e < entries; ++e) {
        const T* qs = qv.data() + index->src[e] * d;
        const T* kd = kv.data() + index->dst[e] * d;
        for (std::size_t h = 0; h < heads; ++h) {
            T acc{0};
            for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                acc += qs[c] * kd[c];
            }
            out[e * heads + h] = acc * factor;
        }
    }
    return Tensor<T>::from_op({entries, heads}, std::move(out), "edge_head_dot", {q, k},
                              [index, heads, d, dh, factor](Node<T>& self) {
                                  auto& pq = *self.parents[0];
                                  auto& pk = *self.parents[1];
                                  T* dq = pq.requires_grad ? pq.grad_buffer().data() : nullptr;
                                  T* dk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
                                  for (std::size_t e = 0; e < index->num_entries(); ++e) {
                                      const std::size_t s = index->src[e] * d, t = index->dst[e] * d;
                                      for (std::size_t h = 0; h < heads; ++h) {
                                          const T g = self.grad[e * heads + h] * factor;
                                          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                                              if (dq) {
                                                  dq[s + c] += g * pk.value[t + c];
                                              }
                                              if (dk) {
                                                  dk[t + c] += g * pq.value[s + c];
                                              }
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& scores, std::shared_ptr<const SegmentIndex> index) {
    require_matrix("segment_softmax", scores);
    if (scores.rows() != index->num_entries()) {
        throw ShapeError("segment_softmax: " + std::to_string(index->num_entries()) + " index entries, scores have shape " +
                         shape_string(scores.shape()));
    }
    const std::size_t heads = scores.cols();
    const auto in = scores.values();
    std::vector<T> out(in.size());
    for (std::size_t node = 0; node < index->num_nodes; ++node) {
        const std::size_t begin = index->offsets[node], end = index->offsets[node + 1];
        if (begin == end) {
            continue;
        }
        for (std::size_t h = 0; h < heads; ++h) {
            T peak = -std::numeric_limits<T>::infinity();
            for (std::size_t e = begin; e < end; ++e) {
                peak = std::max(peak, in[e * heads + h]);
            }
            T total{0};
            for (std::size_t e = begin; e < end; ++e) {
                out[e * heads + h] = std::exp(in[e * heads + h] - peak);
                total += out[e * heads + h];
            }
            for (std::size_t e = begin; e < end; ++e) {
                out[e * heads + h] /= total;
            }
        }
    }
    return Tensor<T>::from_op(scores.shape(), out, "segment_softmax", {scores},
                              [index, heads, out](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t node = 0; node < index->num_nodes; ++node) {
                                      const std::size_t begin = index->offsets[node], end = index->offsets[node + 1];
                                      for (std::size_t h = 0; h < heads; ++h) {
                                          T dot{0};
                                          for (std::size_t e = begin; e < end; ++e) {
                                              dot += self.grad[e * heads + h] * out[e * heads + h];
                                          }
                                          for (std::size_t e = begin; e < end; ++e) {
                                              const std::size_t i = e * heads + h;
                                              g[i] += out[i] * (self.grad[i] - dot);
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> edge_aggregate(const Tensor<T>& alpha, const Tensor<T>& v, std::shared_ptr<const SegmentIndex> index,
                         std::size_t heads) {
    require_matrix("edge_aggregate", alpha);
    require_matrix("edge_aggregate", v);
    const std::size_t d = v.cols();
    if (alpha.rows() != index->num_entries() || alpha.cols() != heads || heads == 0 || d % heads != 0 ||
        v.rows() != index->num_nodes) {
        shape_mismatch("edge_aggregate", alpha.shape(), v.shape());
    }
    const std::size_t dh = d / heads;
    std::vector<T> out(index->num_nodes * d, T{0});
    const auto av = alpha.values();
    const auto vv = v.values();
    for (std::size_t e = 0; e < index->num_entries(); ++e) {
        T* dst = out.data() + index->src[e] * d;
        const T* src = vv.data() + index->dst[e] * d;
        for (std::size_t h = 0; h < heads; ++h) {
            const T w = av[e * heads + h];
            for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                dst[c] += w * src[c];
            }
        }
    }
    return Tensor<T>::from_op({index->num_nodes, d}, std::move(out), "edge_aggregate", {alpha, v},
                              [index, heads, d, dh](Node<T>& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pv = *self.parents[1];
                                  T* da = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
                                  T* dv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
                                  for (std::size_t e = 0; e < index->num_entries(); ++e) {
                                      const T* dy = self.grad.data() + index->src[e] * d;
                                      const std::size_t t = index->dst[e] * d;
                                      for (std::size_t h = 0; h < heads; ++h) {
                                          const T w = pa.value[e * heads + h];
                                          T acc{0};
                                          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                                              acc += dy[c] * pv.value[t + c];
                                              if (dv) {
                                                  dv[t + c] += w * dy[c];
                                              }
                                          }
                                          if (da) {
                                              da[e * heads + h] += acc;
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
    return Tensor<T>(a.shape(), std::vector<T>(a.values().begin(), a.values().end()), false);
}

// ---- parameters -------------------------------------------------------------

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
    if (find(name) != nullptr) {
        throw std::invalid_argument("parameter '" + name + "' registered twice");
    }
    tensor.node()->requires_grad = true;
    tensor.set_name(name);
    Parameter<T> param;
    param.name = std::move(name);
    param.first_moment.assign(tensor.size(), T{0});
    param.second_moment.assign(tensor.size(), T{0});
    param.tensor = std::move(tensor);
    params_.push_back(std::move(param));
    return params_.back().tensor;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(std::string_view name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& p : params_) {
        p.tensor.zero_grad();
    }
}

template <typename T>
Tensor<T> frobenius_sq(const ParameterSet<T>& params) {
    T total{0};
    std::vector<Tensor<T>> inputs;
    for (const auto& p : params.entries()) {
        for (const T x : p.tensor.values()) {
            total += x * x;
        }
        inputs.push_back(p.tensor);
    }
    return Tensor<T>::from_op({1}, {total}, "frobenius_sq", std::move(inputs), [](Node<T>& self) {
        for (auto& parent : self.parents) {
            auto& g = parent->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += T{2} * parent->value[i] * self.grad[0];
            }
        }
    });
}

template <typename T>
void adam_step(ParameterSet<T>& params, const AdamOptions& options) {
    for (const auto& p : params.entries()) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        for (const T g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite gradient in parameter '" + p.name + "'");
            }
        }
    }
    params.advance();
    const double t = static_cast<double>(params.step());
    const double correction1 = 1.0 - std::pow(options.beta1, t);
    const double correction2 = 1.0 - std::pow(options.beta2, t);
    const T b1 = static_cast<T>(options.beta1);
    const T b2 = static_cast<T>(options.beta2);
    for (auto& p : params.entries()) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        auto values = p.tensor.mutable_values();
        const auto grads = p.tensor.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T g = grads[i];
            p.first_moment[i] = b1 * p.first_moment[i] + (T{1} - b1) * g;
            p.second_moment[i] = b2 * p.second_moment[i] + (T{1} - b2) * g * g;
            const double m_hat = static_cast<double>(p.first_moment[i]) / correction1;
            const double v_hat = static_cast<double>(p.second_moment[i]) / correction2;
            values[i] -= static_cast<T>(options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
        }
        p.tensor.zero_grad();
    }
}

// ---- instantiations -----------------------------------------------------------

#define RGTREC_INSTANTIATE_TENSOR(T)                                                                         \
    template class Tensor<T>;                                                                                \
    template class ComputeTape<T>;                                                                           \
    template class ParameterSet<T>;                                                                          \
    template void backward<T>(const Tensor<T>&);                                                             \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                                       \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                        \
    template Tensor<T> scale_rows<T>(const Tensor<T>&, std::vector<T>);                                      \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                             \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                            \
    template Tensor<T> mean_rows<T>(const Tensor<T>&);                                                       \
    template Tensor<T> square_sum<T>(const Tensor<T>&);                                                      \
    template Tensor<T> concat_cols<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                        \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, std::vector<std::uint32_t>);                         \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                    \
    template Tensor<T> logsumexp_rows<T>(const Tensor<T>&);                                                  \
    template Tensor<T> logsumexp_all<T>(const Tensor<T>&);                                                   \
    template Tensor<T> softplus<T>(const Tensor<T>&);                                                        \
    template Tensor<T> row_dot<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> row_cosine<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> spmm<T>(std::shared_ptr<const SparseMatrix<T>>, const Tensor<T>&);                    \
    template Tensor<T> edge_head_dot<T>(const Tensor<T>&, const Tensor<T>&,                                  \
                                        std::shared_ptr<const SegmentIndex>, std::size_t, T);                \
    template Tensor<T> segment_softmax<T>(const Tensor<T>&, std::shared_ptr<const SegmentIndex>);            \
    template Tensor<T> edge_aggregate<T>(const Tensor<T>&, const Tensor<T>&,                                 \
                                         std::shared_ptr<const SegmentIndex>, std::size_t);                  \
    template Tensor<T> detach<T>(const Tensor<T>&);                                                          \
    template Tensor<T> frobenius_sq<T>(const ParameterSet<T>&);                                              \
    template void adam_step<T>(ParameterSet<T>&, const AdamOptions&);

RGTREC_INSTANTIATE_TENSOR(float)
RGTREC_INSTANTIATE_TENSOR(double)

#undef RGTREC_INSTANTIATE_TENSOR

}  // namespace rgtrec::ad
