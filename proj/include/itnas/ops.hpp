#ifndef ITNAS_OPS_HPP
#define ITNAS_OPS_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "itnas/tensor.hpp"

namespace itnas::ad {

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor negate(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);

// Normalizations over the last axis.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
// Softmax restricted to entries with active[k] set; the others are exactly 0.
Tensor masked_softmax(const Tensor& a, const std::vector<bool>& active);

Tensor matvec(const Tensor& matrix, const Tensor& vec); // [M,N] x [N] -> [M]
Tensor matmul(const Tensor& a, const Tensor& b);        // [M,N] x [N,P] -> [M,P]

struct Conv2dParams {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t padding = 0;
};

// x [N,C,H,W], w [C,kh,kw]; zero padding.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Conv2dParams& params);
// x [N,Cin,H,W], w [Cout,Cin], bias [Cout] or undefined. Samples every stride-th pixel.
Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::size_t stride = 1);

// 3x3 windows with padding 1. Average excludes padded cells; max ignores them and
// routes gradient to the first maximal element in row-major window order.
Tensor avg_pool3x3(const Tensor& x, std::size_t stride);
Tensor max_pool3x3(const Tensor& x, std::size_t stride);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor global_avg_pool(const Tensor& x);                              // [N,C,H,W] -> [N,C]
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias); // [N,F] -> [N,O]

// Mean over the batch of -log_probs[n, labels[n]].
Tensor nll_loss(const Tensor& log_probs, std::span<const int> labels);

Tensor sum(const Tensor& a);
// sum_k weights[k] * terms[k]; weights is a length-K vector.
Tensor weighted_sum(std::span<const Tensor> terms, const Tensor& weights);
Tensor reshape(const Tensor& a, Shape shape);

// Attribute bag for the generic dispatcher.
struct Attrs {
    double factor = 1.0;
    Conv2dParams conv;
    std::size_t stride = 1;
    std::vector<bool> mask;
    std::vector<int> labels;
    Shape shape;
};

// Generic entry point: dispatches to the typed primitive above. Optional trailing
// operands (pointwise bias, weighted_sum weights) follow the tensor operands.
Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs, const Attrs& attrs = {});

} // namespace itnas::ad

#endif // ITNAS_OPS_HPP
