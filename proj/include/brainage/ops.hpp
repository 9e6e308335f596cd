#pragma once

// Layer vocabulary of the two networks: same-padded convolution, 2x max pooling, global average
// pooling, dense, ReLU, inverted dropout and MSE. Every op takes [N, C, spatial...] tensors with
// spatial rank 2 or 3 where relevant, and records a backward closure when an input requires grad.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "brainage/tensor.hpp"

namespace brainage {

namespace detail {

/// Spatial extents padded to three axes; a 2D map is a 3D map of depth 1.
struct Grid3 {
  std::array<Index, 3> n{1, 1, 1};
  Index size() const { return n[0] * n[1] * n[2]; }
};

inline Grid3 spatial_grid(const Shape& shape, std::size_t first_axis) {
  Grid3 g;
  const std::size_t rank = shape.size() - first_axis;
  for (std::size_t i = 0; i < rank; ++i) g.n[3 - rank + i] = shape[first_axis + i];
  return g;
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Column-buffer budget for chunked im2col, in elements.
inline constexpr Index kIm2colBudget = Index{1} << 22;

/// Fills col (rows = C * K, one column per output position in [p0, p0 + count)).
template <typename Scalar>
void im2col(const Scalar* image, Index channels, const Grid3& g, const Grid3& k, Index p0, Index count,
            ColMatrix<Scalar>& col) {
  const Index ksize = k.size();
  col.resize(channels * ksize, count);
  const Index h0 = k.n[0] / 2, h1 = k.n[1] / 2, h2 = k.n[2] / 2;
  for (Index j = 0; j < count; ++j) {
    const Index p = p0 + j;
    const Index i2 = p % g.n[2];
    const Index i1 = (p / g.n[2]) % g.n[1];
    const Index i0 = p / (g.n[2] * g.n[1]);
    Scalar* dst = col.col(j).data();
    for (Index c = 0; c < channels; ++c) {
      const Scalar* plane = image + c * g.size();
      for (Index a0 = 0; a0 < k.n[0]; ++a0) {
        const Index s0 = i0 + a0 - h0;
        const bool in0 = s0 >= 0 && s0 < g.n[0];
        for (Index a1 = 0; a1 < k.n[1]; ++a1) {
          const Index s1 = i1 + a1 - h1;
          const bool in01 = in0 && s1 >= 0 && s1 < g.n[1];
          for (Index a2 = 0; a2 < k.n[2]; ++a2) {
            const Index s2 = i2 + a2 - h2;
            *dst++ = (in01 && s2 >= 0 && s2 < g.n[2]) ? plane[(s0 * g.n[1] + s1) * g.n[2] + s2] : Scalar(0);
          }
        }
      }
    }
  }
}

/// Scatter-adds a column buffer back onto the image gradient; the adjoint of im2col.
template <typename Scalar>
void col2im(const ColMatrix<Scalar>& col, Index channels, const Grid3& g, const Grid3& k, Index p0,
            Scalar* image) {
  const Index h0 = k.n[0] / 2, h1 = k.n[1] / 2, h2 = k.n[2] / 2;
  for (Index j = 0; j < col.cols(); ++j) {
    const Index p = p0 + j;
    const Index i2 = p % g.n[2];
    const Index i1 = (p / g.n[2]) % g.n[1];
    const Index i0 = p / (g.n[2] * g.n[1]);
    const Scalar* src = col.col(j).data();
    for (Index c = 0; c < channels; ++c) {
      Scalar* plane = image + c * g.size();
      for (Index a0 = 0; a0 < k.n[0]; ++a0) {
        const Index s0 = i0 + a0 - h0;
        const bool in0 = s0 >= 0 && s0 < g.n[0];
        for (Index a1 = 0; a1 < k.n[1]; ++a1) {
          const Index s1 = i1 + a1 - h1;
          const bool in01 = in0 && s1 >= 0 && s1 < g.n[1];
          for (Index a2 = 0; a2 < k.n[2]; ++a2, ++src) {
            const Index s2 = i2 + a2 - h2;
            if (in01 && s2 >= 0 && s2 < g.n[2]) plane[(s0 * g.n[1] + s1) * g.n[2] + s2] += *src;
          }
        }
      }
    }
  }
}

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Tensor<Scalar>*> inputs) {
  for (const auto* t : inputs)
    if (t && *t && t->requires_grad()) return true;
  return false;
}

template <typename Scalar, typename Fn>
void link(Tensor<Scalar>& out, std::initializer_list<const Tensor<Scalar>*> inputs, Fn&& fn) {
  out.set_requires_grad(true);
  for (const auto* t : inputs)
    if (t && *t) out.node()->parents.push_back(t->node());
  out.node()->backward_fn = std::forward<Fn>(fn);
}

}  // namespace detail

/// Stride-1 convolution with zero "same" padding and odd kernels.
///
/// input [N, C, s...], weights [F, C, k...], bias [F] -> [N, F, s...] for spatial rank 2 or 3.
template <typename Scalar>
Tensor<Scalar> conv(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias) {
  using namespace detail;
  const Index rank = input.rank() - 2;
  if (rank < 2 || rank > 3 || weights.rank() != input.rank())
    fail(ErrorKind::ShapeMismatch, "conv needs [N,C,spatial] input with spatial rank 2 or 3 and matching weights");
  const Index batch = input.dim(0), channels = input.dim(1), filters = weights.dim(0);
  if (weights.dim(1) != channels || bias.size() != filters)
    fail(ErrorKind::ShapeMismatch, "conv weights " + shape_string(weights.shape()) + " vs input " +
                                       shape_string(input.shape()));
  for (Index i = 2; i < weights.rank(); ++i)
    if (weights.dim(i) % 2 == 0) fail(ErrorKind::ShapeMismatch, "conv kernel extents must be odd");

  const Grid3 g = spatial_grid(input.shape(), 2);
  const Grid3 k = spatial_grid(weights.shape(), 2);
  const Index positions = g.size();
  const Index rows = channels * k.size();
  const Index chunk = std::max<Index>(1, std::min<Index>(positions, kIm2colBudget / std::max<Index>(rows, 1)));

  Shape out_shape = input.shape();
  out_shape[1] = filters;
  Tensor<Scalar> out(out_shape);

  Eigen::Map<const RowMatrix<Scalar>> w(weights.data().data(), filters, rows);
  ColMatrix<Scalar> col;
  for (Index n = 0; n < batch; ++n) {
    const Scalar* image = input.data().data() + n * channels * positions;
    Eigen::Map<RowMatrix<Scalar>> o(out.data().data() + n * filters * positions, filters, positions);
    for (Index p0 = 0; p0 < positions; p0 += chunk) {
      const Index count = std::min(chunk, positions - p0);
      im2col(image, channels, g, k, p0, count, col);
      o.middleCols(p0, count).noalias() = w * col;
      o.middleCols(p0, count).colwise() += bias.data();
    }
  }

  if (any_requires_grad({&input, &weights, &bias})) {
    link(out, {&input, &weights, &bias},
         [input, weights, bias, g, k, batch, channels, filters, positions, rows, chunk](const TensorNode<Scalar>& self) {
           auto& in_node = *input.node();
           auto& w_node = *weights.node();
           auto& b_node = *bias.node();
           Eigen::Map<const RowMatrix<Scalar>> w(w_node.data.data(), filters, rows);
           ColMatrix<Scalar> col, dcol;
           for (Index n = 0; n < batch; ++n) {
             Eigen::Map<const RowMatrix<Scalar>> go(self.grad.data() + n * filters * positions, filters, positions);
             if (b_node.requires_grad) b_node.ensure_grad() += go.rowwise().sum();
             const Scalar* image = in_node.data.data() + n * channels * positions;
             for (Index p0 = 0; p0 < positions; p0 += chunk) {
               const Index count = std::min(chunk, positions - p0);
               if (w_node.requires_grad) {
                 im2col(image, channels, g, k, p0, count, col);
                 Eigen::Map<RowMatrix<Scalar>> gw(w_node.ensure_grad().data(), filters, rows);
                 gw.noalias() += go.middleCols(p0, count) * col.transpose();
               }
               if (in_node.requires_grad) {
                 dcol.noalias() = w.transpose() * go.middleCols(p0, count);
                 col2im(dcol, channels, g, k, p0, in_node.ensure_grad().data() + n * channels * positions);
               }
             }
           }
         });
  }
  return out;
}

/// Max pooling with window 2 and stride 2 on every spatial axis; odd trailing elements drop.
/// Ties go to the lowest flat index.
template <typename Scalar>
Tensor<Scalar> max_pool(const Tensor<Scalar>& input) {
  using namespace detail;
  const Index rank = input.rank() - 2;
  if (rank < 2 || rank > 3) fail(ErrorKind::ShapeMismatch, "max_pool needs spatial rank 2 or 3");
  const Grid3 g = spatial_grid(input.shape(), 2);
  Shape out_shape = input.shape();
  for (std::size_t i = 2; i < out_shape.size(); ++i) out_shape[i] /= 2;
  const Grid3 o = spatial_grid(out_shape, 2);
  const std::array<Index, 3> win{rank == 3 ? Index{2} : Index{1}, 2, 2};
  const Index planes = input.dim(0) * input.dim(1);

  Tensor<Scalar> out(out_shape);
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  for (Index pl = 0; pl < planes; ++pl) {
    const Scalar* src = input.data().data() + pl * g.size();
    for (Index i0 = 0; i0 < o.n[0]; ++i0)
      for (Index i1 = 0; i1 < o.n[1]; ++i1)
        for (Index i2 = 0; i2 < o.n[2]; ++i2) {
          Index best = -1;
          Scalar best_value = -std::numeric_limits<Scalar>::infinity();
          for (Index a0 = 0; a0 < win[0]; ++a0)
            for (Index a1 = 0; a1 < 2; ++a1)
              for (Index a2 = 0; a2 < 2; ++a2) {
                const Index idx = ((i0 * win[0] + a0) * g.n[1] + i1 * 2 + a1) * g.n[2] + i2 * 2 + a2;
                if (best < 0 || src[idx] > best_value) {
                  best = idx;
                  best_value = src[idx];
                }
              }
          const Index dst = pl * o.size() + (i0 * o.n[1] + i1) * o.n[2] + i2;
          out.data()(dst) = best_value;
          argmax[static_cast<std::size_t>(dst)] = pl * g.size() + best;
        }
  }

  if (input.requires_grad()) {
    link(out, {&input}, [input, argmax = std::move(argmax)](const TensorNode<Scalar>& self) {
      auto& gin = input.node()->ensure_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) gin(argmax[i]) += self.grad(static_cast<Index>(i));
    });
  }
  return out;
}

/// Mean over all spatial positions: [N, C, s...] -> [N, C].
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  if (input.rank() < 3) fail(ErrorKind::ShapeMismatch, "global_avg_pool needs [N,C,spatial...]");
  const Index rows = input.dim(0) * input.dim(1);
  const Index cols = input.size() / std::max<Index>(rows, 1);
  if (cols < 1) fail(ErrorKind::ShapeMismatch, "global_avg_pool on an empty spatial map " + shape_string(input.shape()));
  Tensor<Scalar> out({input.dim(0), input.dim(1)});
  Eigen::Map<const detail::RowMatrix<Scalar>> x(input.data().data(), rows, cols);
  out.data() = x.rowwise().mean();
  if (input.requires_grad()) {
    detail::link(out, {&input}, [input, rows, cols](const TensorNode<Scalar>& self) {
      Eigen::Map<detail::RowMatrix<Scalar>> gx(input.node()->ensure_grad().data(), rows, cols);
      gx.colwise() += self.grad / Scalar(cols);
    });
  }
  return out;
}

/// input [N, D] * weights [D, U] + bias [U].
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias) {
  using detail::RowMatrix;
  if (input.rank() != 2 || weights.rank() != 2 || input.dim(1) != weights.dim(0) || bias.size() != weights.dim(1))
    fail(ErrorKind::ShapeMismatch, "dense " + shape_string(input.shape()) + " x " + shape_string(weights.shape()));
  const Index n = input.dim(0), d = input.dim(1), u = weights.dim(1);
  Tensor<Scalar> out({n, u});
  Eigen::Map<const RowMatrix<Scalar>> x(input.data().data(), n, d);
  Eigen::Map<const RowMatrix<Scalar>> w(weights.data().data(), d, u);
  Eigen::Map<RowMatrix<Scalar>> o(out.data().data(), n, u);
  o.noalias() = x * w;
  o.rowwise() += bias.data().transpose();
  if (detail::any_requires_grad({&input, &weights, &bias})) {
    detail::link(out, {&input, &weights, &bias}, [input, weights, bias, n, d, u](const TensorNode<Scalar>& self) {
      Eigen::Map<const RowMatrix<Scalar>> go(self.grad.data(), n, u);
      Eigen::Map<const RowMatrix<Scalar>> x(input.node()->data.data(), n, d);
      Eigen::Map<const RowMatrix<Scalar>> w(weights.node()->data.data(), d, u);
      if (input.requires_grad()) {
        Eigen::Map<RowMatrix<Scalar>> gx(input.node()->ensure_grad().data(), n, d);
        gx.noalias() += go * w.transpose();
      }
      if (weights.requires_grad()) {
        Eigen::Map<RowMatrix<Scalar>> gw(weights.node()->ensure_grad().data(), d, u);
        gw.noalias() += x.transpose() * go;
      }
      if (bias.requires_grad()) bias.node()->ensure_grad() += go.colwise().sum().transpose();
    });
  }
  return out;
}

/// Elementwise max(0, x); the gradient passes only where x > 0.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape(), input.data().cwiseMax(Scalar(0)));
  if (input.requires_grad()) {
    detail::link(out, {&input}, [input](const TensorNode<Scalar>& self) {
      const auto& x = input.node()->data;
      input.node()->ensure_grad() += (x.array() > Scalar(0)).select(self.grad, Scalar(0));
    });
  }
  return out;
}

/// Inverted dropout: in Train mode each element is zeroed with probability p and survivors are
/// scaled by 1 / (1 - p). Infer mode and p == 0 return the input unchanged.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& input, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::BadProbability, "dropout probability must lie in [0, 1)");
  if (mode == Mode::Infer || p == 0.0) return input;
  using Vector = typename Tensor<Scalar>::Vector;
  Vector mask(input.size());
  std::bernoulli_distribution keep(1.0 - p);
  const auto scale = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index i = 0; i < mask.size(); ++i) mask(i) = keep(rng) ? scale : Scalar(0);
  Tensor<Scalar> out(input.shape(), input.data().cwiseProduct(mask));
  if (input.requires_grad()) {
    detail::link(out, {&input}, [input, mask = std::move(mask)](const TensorNode<Scalar>& self) {
      input.node()->ensure_grad() += self.grad.cwiseProduct(mask);
    });
  }
  return out;
}

/// (1/N) sum (pred - target)^2 as a one-element tensor. pred may be [N] or [N, 1].
template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.size() == 0 || target.size() == 0) fail(ErrorKind::EmptyBatch, "mse_loss on an empty batch");
  if (pred.size() != target.size())
    fail(ErrorKind::ShapeMismatch, "mse_loss " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  const Index n = pred.size();
  typename Tensor<Scalar>::Vector diff = pred.data() - target.data();
  Tensor<Scalar> out({1});
  out.data()(0) = diff.squaredNorm() / Scalar(n);
  if (pred.requires_grad()) {
    detail::link(out, {&pred}, [pred, diff = std::move(diff), n](const TensorNode<Scalar>& self) {
      pred.node()->ensure_grad() += diff * (Scalar(2) * self.grad(0) / Scalar(n));
    });
  }
  return out;
}

}  // namespace brainage

namespace brainage {

/// Multiplies every element by a constant.
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& input, Scalar factor) {
  Tensor<Scalar> out(input.shape(), input.data() * factor);
  if (input.requires_grad()) {
    detail::link(out, {&input}, [input, factor](const TensorNode<Scalar>& self) {
      input.node()->ensure_grad() += self.grad * factor;
    });
  }
  return out;
}

}  // namespace brainage
