#pragma once

#include <cstddef>
#include <vector>

#include "ka/tensor.hpp"

// Differentiable primitives. All image tensors are NCHW.
namespace ka::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Sum of all entries as a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum of scalar tensors; undefined entries are skipped. Returns 0 if all skipped.
Tensor sum_scalars(const std::vector<Tensor>& terms);

Tensor reshape(const Tensor& a, Shape shape);
// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Row-wise x / max(‖x‖, eps).
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);

// x: N×in, weight: out×in, bias: out (may be undefined). Returns N×out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// weight: O×C×kh×kw, bias: O (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad);
// N×C×H×W -> N×C
Tensor global_avg_pool(const Tensor& x);

// running_mean / running_var are updated in place when training.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                    Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

}  // namespace ka::ops
