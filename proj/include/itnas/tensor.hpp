#ifndef ITNAS_TENSOR_HPP
#define ITNAS_TENSOR_HPP

// Dense 64-bit tensors and a reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Leaves are created by the
// user; every primitive applied to at least one gradient-requiring input (with
// recording enabled) appends a record to the thread-local active Tape. Tape
// order is creation order, which is a valid topological order of the graph, so
// backward simply replays records in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace itnas::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

enum class Primitive {
    Add,
    Mul,
    Negate,
    Scale,
    Exp,
    Log,
    Relu,
    Softmax,
    MaskedSoftmax,
    LogSoftmax,
    MatVec,
    MatMul,
    DepthwiseConv2d,
    PointwiseConv2d,
    AvgPool3x3,
    MaxPool3x3,
    ConcatChannels,
    GlobalAvgPool,
    Affine,
    NllLoss,
    Sum,
    WeightedSum,
    Reshape,
};

std::string_view primitive_name(Primitive kind);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty means "no gradient yet"
    bool requires_grad = false;
    std::uint64_t tape_id = 0; // 0: not produced by a recorded primitive
    std::size_t record_index = 0;

    // Gradient buffer, zero-initialized on first use.
    std::vector<double>& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

} // namespace detail

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    // Writable view; only permitted on tensors not produced by a recorded primitive.
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t flat_index) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Same values, fresh storage, no gradient tracking.
    Tensor detach() const;
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const detail::NodePtr& node() const { return node_; }
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

private:
    detail::NodePtr node_;
};

class Tape {
public:
    using BackwardFn = std::function<void(const detail::Node& output)>;

    Tape();

    // Thread-local tape every primitive records onto.
    static Tape& active();

    // Drops every record; tensors recorded earlier are no longer "on the tape".
    void reset();

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }
    std::uint64_t id() const { return id_; }
    std::vector<Primitive> kinds() const;

    void record(Primitive kind, std::vector<detail::NodePtr> inputs,
                const detail::NodePtr& output, BackwardFn fn);

    // Propagates d(root)/d(.) into every gradient-requiring tensor reachable
    // from root. Leaf gradients accumulate; call zero_grad between passes.
    void backward(const Tensor& root);

private:
    struct Record {
        Primitive kind;
        std::vector<detail::NodePtr> inputs;
        detail::NodePtr output;
        BackwardFn fn;
    };

    std::uint64_t id_;
    std::vector<Record> records_;
    bool consumed_ = false;
};

// backward on the active tape.
void backward(const Tensor& root);

bool grad_enabled();

// Disables recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Checked mode scans primitive inputs for NaN/Inf. Off by default.
void set_checked_mode(bool enabled);
bool checked_mode();

} // namespace itnas::ad

#endif // ITNAS_TENSOR_HPP
