#include "itnas/tensor.hpp"

#include <atomic>
#include <sstream>

#include "itnas/error.hpp"

namespace itnas::ad {

namespace {

std::atomic<std::uint64_t> g_next_tape_id{1};
std::atomic<bool> g_checked_mode{false};
thread_local bool t_grad_enabled = true;

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string_view primitive_name(Primitive kind) {
    switch (kind) {
    case Primitive::Add: return "add";
    case Primitive::Mul: return "mul";
    case Primitive::Negate: return "negate";
    case Primitive::Scale: return "scale";
    case Primitive::Exp: return "exp";
    case Primitive::Log: return "log";
    case Primitive::Relu: return "relu";
    case Primitive::Softmax: return "softmax";
    case Primitive::MaskedSoftmax: return "masked_softmax";
    case Primitive::LogSoftmax: return "log_softmax";
    case Primitive::MatVec: return "matvec";
    case Primitive::MatMul: return "matmul";
    case Primitive::DepthwiseConv2d: return "depthwise_conv2d";
    case Primitive::PointwiseConv2d: return "pointwise_conv2d";
    case Primitive::AvgPool3x3: return "avg_pool_3x3";
    case Primitive::MaxPool3x3: return "max_pool_3x3";
    case Primitive::ConcatChannels: return "concat_channels";
    case Primitive::GlobalAvgPool: return "global_avg_pool";
    case Primitive::Affine: return "affine";
    case Primitive::NllLoss: return "nll_loss";
    case Primitive::Sum: return "sum";
    case Primitive::WeightedSum: return "weighted_sum";
    case Primitive::Reshape: return "reshape";
    }
    return "unknown";
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
    }
    return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) {
        throw ShapeError("use of undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
    shape();
    return node_->values;
}

std::span<double> Tensor::mutable_values() {
    shape();
    if (node_->tape_id != 0) {
        throw TapeError("cannot mutate a tensor produced by a recorded primitive");
    }
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    }
    return node_->values[0];
}

double Tensor::at(std::size_t flat_index) const { return values()[flat_index]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    shape();
    if (node_->tape_id != 0) {
        throw TapeError("requires_grad can only be changed on leaf tensors");
    }
    node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_ && node_->tape_id == 0; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    shape();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->values, false); }

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::reset() {
    records_.clear();
    consumed_ = false;
    id_ = g_next_tape_id.fetch_add(1);
}

std::vector<Primitive> Tape::kinds() const {
    std::vector<Primitive> out;
    out.reserve(records_.size());
    for (const Record& r : records_) {
        out.push_back(r.kind);
    }
    return out;
}

void Tape::record(Primitive kind, std::vector<detail::NodePtr> inputs,
                  const detail::NodePtr& output, BackwardFn fn) {
    if (consumed_) {
        throw TapeError("tape already consumed by backward; reset it before recording");
    }
    output->tape_id = id_;
    output->record_index = records_.size();
    records_.push_back(Record{kind, std::move(inputs), output, std::move(fn)});
}

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.numel() != 1) {
        throw TapeError("backward root must be a scalar tensor");
    }
    const detail::NodePtr& node = root.node();
    if (node->tape_id != id_ || node->record_index >= records_.size() ||
        records_[node->record_index].output != node) {
        throw TapeError("backward root was not produced on the active tape");
    }
    if (consumed_) {
        throw TapeError("backward already ran on this tape; reset it first");
    }
    consumed_ = true;
    node->grad.assign(1, 1.0);
    for (std::size_t i = node->record_index + 1; i-- > 0;) {
        Record& rec = records_[i];
        if (rec.output->grad.empty()) {
            continue;
        }
        rec.fn(*rec.output);
    }
}

void backward(const Tensor& root) { Tape::active().backward(root); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_checked_mode(bool enabled) { g_checked_mode.store(enabled); }

bool checked_mode() { return g_checked_mode.load(); }

} // namespace itnas::ad
