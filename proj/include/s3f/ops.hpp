#pragma once

#include <cstdint>
#include <vector>

#include "s3f/value.hpp"
#include "s3f/vec.hpp"

namespace s3f::nn::ops {

// Elementwise binary (shapes must match exactly).
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);

// Elementwise unary.
Value neg(const Value& a);
Value scale(const Value& a, real c);
Value add_const(const Value& a, real c);
Value exp(const Value& a);
Value log(const Value& a);
Value sqrt(const Value& a);
Value square(const Value& a);
Value abs(const Value& a);
Value sin(const Value& a);
Value cos(const Value& a);
Value tanh(const Value& a);
Value sigmoid(const Value& a);
Value relu(const Value& a);
Value leaky_relu(const Value& a, real slope = 0.01);
Value swish(const Value& a);
Value softplus(const Value& a);
Value clamp(const Value& a, real lo, real hi);  // zero gradient outside [lo, hi]

// Reductions and broadcasts.
Value sum_all(const Value& a);                    // -> scalar
Value mean_all(const Value& a);                   // -> scalar
Value row_sums(const Value& a);                   // (M,N) -> (M)
Value col_sums(const Value& a);                   // (M,N) -> (N)
Value rep_rows(const Value& v, int rows);         // (N) -> (rows,N)
Value rep_cols(const Value& v, int cols);         // (M) -> (M,cols)
Value rep_all(const Value& s, TensorShape shape); // scalar -> shape
Value add_rowvec(const Value& m, const Value& v); // (M,N)+(N)
Value mul_rowscale(const Value& m, const Value& c);  // row i scaled by c[i]

// Matrix products, row-major. nt multiplies by the transpose of b, tn by the
// transpose of a.
Value matmul(const Value& a, const Value& b);     // (M,K)x(K,N)
Value matmul_nt(const Value& a, const Value& b);  // (M,K)x(N,K) -> (M,N)
Value matmul_tn(const Value& a, const Value& b);  // (K,M)x(K,N) -> (M,N)

// Shape surgery.
Value reshape(const Value& a, TensorShape s);
Value concat_cols(const Value& a, const Value& b);
Value concat_rows(const Value& a, const Value& b);
Value slice_cols(const Value& a, int c0, int c1);
Value slice_rows(const Value& a, int r0, int r1);
Value pad_cols(const Value& a, int c0, int total);  // embed into zero columns
Value pad_rows(const Value& a, int r0, int total);
Value flip_cols(const Value& a);                    // reverse order within each row
Value transpose(const Value& a);                    // (M,N) -> (N,M)
Value sum_mid(const Value& a);                      // (A,B,C) -> (A,C), sum over B
Value rep_mid(const Value& a, int b);               // (A,C) -> (A,B,C)

// Row gather/scatter with constant indices.
Value gather_rows(const Value& a, std::vector<int> idx);
Value scatter_add_rows(const Value& a, std::vector<int> idx, int rows);

// Row-wise softmax with max-shift, differentiable to any order.
Value softmax_rows(const Value& a);

// Exclusive prefix sum along each row: out(i,j) = sum_{k<j} a(i,k).
Value cumsum_rows_exclusive(const Value& a);

// Laplace-CDF density: sigma = (1/beta) * Psi_beta(-s), beta a positive
// scalar. First-order differentiable in both arguments.
Value laplace_density(const Value& s, const Value& beta);

// --- Ops with raw (first-order only) backward passes. These never appear on
// --- a query-point-to-SDF path, and assert if swept with create_graph.

// 3x3 convolution, stride 1, zero padding 1. x: (Cin,H,W), w: (Cout,Cin,9),
// b: (Cout) -> (Cout,H,W).
Value conv2d_3x3(const Value& x, const Value& w, const Value& b);
Value avgpool2(const Value& x);           // (C,H,W) -> (C,H/2,W/2)
Value upsample2(const Value& x);          // nearest, (C,H,W) -> (C,2H,2W)
Value global_avgpool(const Value& x);     // (C,H,W) -> (C)

// Bilinear sampling of a feature image at continuous pixel coordinates.
// Rows with uv outside [0,W-1]x[0,H-1], or with valid[i]==0, produce zeros
// and set oob[i]=1. Differentiable w.r.t. both img and uv.
Value bilinear_sample(const Value& img, const Value& uv, const std::vector<uint8_t>& valid,
                      std::vector<uint8_t>& oob);

// Per-row affine map with constant coefficients: out_i = A_i x_i + t_i.
Value affine_rows(const Value& x, std::vector<Mat3> A, std::vector<Vec3> t);

}  // namespace s3f::nn::ops
