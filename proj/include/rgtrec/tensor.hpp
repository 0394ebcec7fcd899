#pragma once

// Dense tensors with a tape-based reverse-mode differentiation engine.
//
// A Tensor is a cheap handle onto a shared node. Operations build new nodes
// that keep their inputs alive and carry a backward closure; calling
// backward() on a scalar records the reachable nodes into a ComputeTape in
// topological order and replays it in reverse. Leaf gradients accumulate
// across replays and are only cleared by the optimizer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rgtrec::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    const char* op = "leaf";
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& grad_buffer() {
        if (grad.size() != value.size()) {
            grad.assign(value.size(), T{0});
        }
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;
    using BackwardFn = std::function<void(Node<T>&)>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    // Builds the result of a primitive. If no input requires a gradient the
    // node is recorded as a constant and `backward` is dropped.
    static Tensor from_op(Shape shape, std::vector<T> value, const char* op,
                          std::vector<Tensor> inputs, BackwardFn backward);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    // Mutable access is meant for parameter initialisation and optimizer
    // updates; never write into a tensor that already feeds a recorded op.
    std::span<T> mutable_values() { return node_->value; }
    T item() const;
    T at(std::size_t row, std::size_t col) const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    const std::string& name() const { return node_->name; }
    void set_name(std::string name) { node_->name = std::move(name); }

    Node<T>* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    NodePtr node_;
};

// Reverse topological replay record for one scalar loss.
template <typename T>
class ComputeTape {
public:
    static ComputeTape record(const Tensor<T>& loss);

    // Seeds d(loss)/d(loss) = 1 and runs every backward closure once, in
    // reverse recording order.
    void replay();

    std::size_t size() const { return order_.size(); }
    // Nodes in forward (topological) order.
    std::span<const std::shared_ptr<Node<T>>> nodes() const { return order_; }

private:
    std::vector<std::shared_ptr<Node<T>>> order_;
};

template <typename T>
void backward(const Tensor<T>& loss);

// Constant compressed-row sparse matrix used for fixed propagation operators.
template <typename T>
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> offsets;  // rows + 1
    std::vector<std::uint32_t> indices;
    std::vector<T> values;
};

// Directed edges grouped by source node: entries offsets[k]..offsets[k+1]
// all have src == k. Used by the sparse attention primitives.
struct SegmentIndex {
    std::size_t num_nodes = 0;
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> src;
    std::vector<std::uint32_t> dst;

    std::size_t num_entries() const { return dst.size(); }
};

// ---- primitives -----------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a · bᵀ, the shape of every `x · Wᵀ` projection.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// Multiplies row r by the constant factors[r].
template <typename T> Tensor<T> scale_rows(const Tensor<T>& a, std::vector<T> factors);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// Column means, 1 × cols.
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);
template <typename T> Tensor<T> square_sum(const Tensor<T>& a);

template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::uint32_t> rows);

template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
// rows × 1
template <typename T> Tensor<T> logsumexp_rows(const Tensor<T>& a);
template <typename T> Tensor<T> logsumexp_all(const Tensor<T>& a);
// log(1 + exp(x)), evaluated without overflow.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
// rows × 1
template <typename T> Tensor<T> row_dot(const Tensor<T>& a, const Tensor<T>& b);
// rows × 1; rows with a zero-norm side yield 0 and pass no gradient.
template <typename T> Tensor<T> row_cosine(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> spmm(std::shared_ptr<const SparseMatrix<T>> m, const Tensor<T>& x);

// out[e, h] = factor · <q[src_e], k[dst_e]> restricted to the columns of head h.
template <typename T>
Tensor<T> edge_head_dot(const Tensor<T>& q, const Tensor<T>& k,
                        std::shared_ptr<const SegmentIndex> index, std::size_t heads, T factor);
// Softmax of each column over the entries of every source segment.
template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& scores, std::shared_ptr<const SegmentIndex> index);
// out[src_e, head-h columns] += alpha[e, h] · v[dst_e, head-h columns]
template <typename T>
Tensor<T> edge_aggregate(const Tensor<T>& alpha, const Tensor<T>& v,
                         std::shared_ptr<const SegmentIndex> index, std::size_t heads);

// Same values, cut from the tape.
template <typename T> Tensor<T> detach(const Tensor<T>& a);

// ---- parameters and optimisation -------------------------------------------

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    std::vector<T> first_moment;
    std::vector<T> second_moment;
};

template <typename T>
class ParameterSet {
public:
    // Registers `tensor` as a learnable leaf and returns the stored handle.
    Tensor<T>& add(std::string name, Tensor<T> tensor);

    std::vector<Parameter<T>>& entries() { return params_; }
    const std::vector<Parameter<T>>& entries() const { return params_; }
    const Parameter<T>* find(std::string_view name) const;
    Parameter<T>* find(std::string_view name);

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t step) { step_ = step; }
    void advance() { ++step_; }

    void zero_grad();

private:
    std::vector<Parameter<T>> params_;
    std::uint64_t step_ = 0;
};

// Σ over every parameter of its squared entries, recorded on the tape.
template <typename T>
Tensor<T> frobenius_sq(const ParameterSet<T>& params);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Parameters that received no gradient are left alone.
// Gradients are zeroed afterwards.
template <typename T>
void adam_step(ParameterSet<T>& params, const AdamOptions& options);

}  // namespace rgtrec::ad
