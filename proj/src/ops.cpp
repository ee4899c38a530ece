#include "s3f/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace s3f::nn::ops {

namespace {

void check_finite(const Value& v, const char* op) {
    if (!finite_checks()) return;
    for (real x : v.data())
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("non-finite output of op '") + op + "'");
}

void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}

TensorShape same2(const Value& a, const Value& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
    return a.shape();
}

template <class F>
Value map1(const Value& a, F f) {
    Value out = Value::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return out;
}

// Constant (non-differentiable) elementwise factor, e.g. activation masks.
template <class F>
Value const_mask(const Value& a, F f) {
    Value out = Value::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return out;
}

}  // namespace

Value add(const Value& a, const Value& b) {
    TensorShape s = same2(a, b, "add");
    Value out = Value::zeros(s);
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
    check_finite(out, "add");
    record_entry({a, b}, out, [a, b](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, g);
        if (sink.wants(b)) sink.add(b, g);
    });
    return out;
}

Value sub(const Value& a, const Value& b) {
    TensorShape s = same2(a, b, "sub");
    Value out = Value::zeros(s);
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] - xb[i];
    check_finite(out, "sub");
    record_entry({a, b}, out, [a, b](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, g);
        if (sink.wants(b)) sink.add(b, neg(g));
    });
    return out;
}

Value mul(const Value& a, const Value& b) {
    TensorShape s = same2(a, b, "mul");
    Value out = Value::zeros(s);
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
    check_finite(out, "mul");
    record_entry({a, b}, out, [a, b](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, b));
        if (sink.wants(b)) sink.add(b, mul(g, a));
    });
    return out;
}

Value div(const Value& a, const Value& b) {
    TensorShape s = same2(a, b, "div");
    Value out = Value::zeros(s);
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] / xb[i];
    check_finite(out, "div");
    record_entry({a, b}, out, [a, b, out](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, div(g, b));
        if (sink.wants(b)) sink.add(b, neg(div(mul(g, out), b)));
    });
    return out;
}

Value neg(const Value& a) {
    Value out = map1(a, [](real x) { return -x; });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, neg(g));
    });
    return out;
}

Value scale(const Value& a, real c) {
    Value out = map1(a, [c](real x) { return x * c; });
    check_finite(out, "scale");
    record_entry({a}, out, [a, c](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, scale(g, c));
    });
    return out;
}

Value add_const(const Value& a, real c) {
    Value out = map1(a, [c](real x) { return x + c; });
    check_finite(out, "add_const");
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, g);
    });
    return out;
}

Value exp(const Value& a) {
    Value out = map1(a, [](real x) { return std::exp(x); });
    check_finite(out, "exp");
    record_entry({a}, out, [a, out](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, out));
    });
    return out;
}

Value log(const Value& a) {
    Value out = map1(a, [](real x) { return std::log(x); });
    check_finite(out, "log");
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, div(g, a));
    });
    return out;
}

Value sqrt(const Value& a) {
    Value out = map1(a, [](real x) { return std::sqrt(x); });
    check_finite(out, "sqrt");
    record_entry({a}, out, [a, out](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, div(scale(g, 0.5), out));
    });
    return out;
}

Value square(const Value& a) {
    Value out = map1(a, [](real x) { return x * x; });
    check_finite(out, "square");
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, scale(a, 2.0)));
    });
    return out;
}

Value abs(const Value& a) {
    Value out = map1(a, [](real x) { return std::abs(x); });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a))
            sink.add(a, mul(g, const_mask(a, [](real x) { return x >= 0 ? 1.0 : -1.0; })));
    });
    return out;
}

Value sin(const Value& a) {
    Value out = map1(a, [](real x) { return std::sin(x); });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, cos(a)));
    });
    return out;
}

Value cos(const Value& a) {
    Value out = map1(a, [](real x) { return std::cos(x); });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, neg(mul(g, sin(a))));
    });
    return out;
}

Value tanh(const Value& a) {
    Value out = map1(a, [](real x) { return std::tanh(x); });
    record_entry({a}, out, [a, out](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, add_const(neg(square(out)), 1.0)));
    });
    return out;
}

Value sigmoid(const Value& a) {
    Value out = map1(a, [](real x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    record_entry({a}, out, [a, out](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, mul(out, add_const(neg(out), 1.0))));
    });
    return out;
}

Value relu(const Value& a) {
    Value out = map1(a, [](real x) { return x > 0 ? x : 0.0; });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a))
            sink.add(a, mul(g, const_mask(a, [](real x) { return x > 0 ? 1.0 : 0.0; })));
    });
    return out;
}

Value leaky_relu(const Value& a, real slope) {
    Value out = map1(a, [slope](real x) { return x > 0 ? x : slope * x; });
    record_entry({a}, out, [a, slope](const Value& g, GradSink& sink) {
        if (sink.wants(a))
            sink.add(a, mul(g, const_mask(a, [slope](real x) { return x > 0 ? 1.0 : slope; })));
    });
    return out;
}

Value swish(const Value& a) {
    Value out = map1(a, [](real x) {
        real s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return x * s;
    });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) {
            Value s = sigmoid(a);
            // d/dx x*s(x) = s + x s (1 - s)
            Value ds = add(s, mul(a, mul(s, add_const(neg(s), 1.0))));
            sink.add(a, mul(g, ds));
        }
    });
    return out;
}

Value softplus(const Value& a) {
    Value out = map1(a, [](real x) { return x > 30 ? x : std::log1p(std::exp(x)); });
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, mul(g, sigmoid(a)));
    });
    return out;
}

Value clamp(const Value& a, real lo, real hi) {
    Value out = map1(a, [lo, hi](real x) { return std::min(hi, std::max(lo, x)); });
    record_entry({a}, out, [a, lo, hi](const Value& g, GradSink& sink) {
        if (sink.wants(a))
            sink.add(a, mul(g, const_mask(a, [lo, hi](real x) {
                                return (x > lo && x < hi) ? 1.0 : 0.0;
                            })));
    });
    return out;
}

Value sum_all(const Value& a) {
    real s = 0;
    for (real x : a.data()) s += x;
    Value out = Value::scalar(s);
    check_finite(out, "sum_all");
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, rep_all(g, a.shape()));
    });
    return out;
}

Value mean_all(const Value& a) { return scale(sum_all(a), 1.0 / (real)a.numel()); }

Value rep_all(const Value& s, TensorShape shape) {
    require(s.numel() == 1, "rep_all needs a scalar");
    Value out = Value::full(shape, s.data()[0]);
    record_entry({s}, out, [s, shape](const Value& g, GradSink& sink) {
        if (sink.wants(s)) sink.add(s, reshape(sum_all(g), s.shape()));
    });
    return out;
}

Value row_sums(const Value& a) {
    require(a.shape().rank == 2, "row_sums needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    Value out = Value::zeros(TensorShape::vec(m));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i) {
        real s = 0;
        for (int j = 0; j < n; ++j) s += x[(size_t)i * n + j];
        y[i] = s;
    }
    check_finite(out, "row_sums");
    record_entry({a}, out, [a, n](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, rep_cols(g, n));
    });
    return out;
}

Value col_sums(const Value& a) {
    require(a.shape().rank == 2, "col_sums needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    Value out = Value::zeros(TensorShape::vec(n));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[j] += x[(size_t)i * n + j];
    check_finite(out, "col_sums");
    record_entry({a}, out, [a, m](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, rep_rows(g, m));
    });
    return out;
}

Value rep_rows(const Value& v, int rows) {
    require(v.shape().rank == 1, "rep_rows needs rank 1");
    int n = v.shape().dims[0];
    Value out = Value::zeros(TensorShape::mat(rows, n));
    const auto& x = v.data();
    auto& y = out.data_mut();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) y[(size_t)i * n + j] = x[j];
    record_entry({v}, out, [v](const Value& g, GradSink& sink) {
        if (sink.wants(v)) sink.add(v, col_sums(g));
    });
    return out;
}

Value rep_cols(const Value& v, int cols) {
    require(v.shape().rank == 1, "rep_cols needs rank 1");
    int m = v.shape().dims[0];
    Value out = Value::zeros(TensorShape::mat(m, cols));
    const auto& x = v.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cols; ++j) y[(size_t)i * cols + j] = x[i];
    record_entry({v}, out, [v](const Value& g, GradSink& sink) {
        if (sink.wants(v)) sink.add(v, row_sums(g));
    });
    return out;
}

Value add_rowvec(const Value& m, const Value& v) {
    require(m.shape().rank == 2 && v.shape().rank == 1, "add_rowvec shapes");
    require(m.shape().dims[1] == v.shape().dims[0], "add_rowvec width mismatch");
    int rows = m.shape().dims[0], n = m.shape().dims[1];
    Value out = Value::zeros(m.shape());
    const auto& xm = m.data();
    const auto& xv = v.data();
    auto& y = out.data_mut();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) y[(size_t)i * n + j] = xm[(size_t)i * n + j] + xv[j];
    check_finite(out, "add_rowvec");
    record_entry({m, v}, out, [m, v](const Value& g, GradSink& sink) {
        if (sink.wants(m)) sink.add(m, g);
        if (sink.wants(v)) sink.add(v, col_sums(g));
    });
    return out;
}

Value mul_rowscale(const Value& m, const Value& c) {
    require(m.shape().rank == 2 && c.shape().rank == 1, "mul_rowscale shapes");
    require(m.shape().dims[0] == c.shape().dims[0], "mul_rowscale height mismatch");
    int rows = m.shape().dims[0], n = m.shape().dims[1];
    Value out = Value::zeros(m.shape());
    const auto& xm = m.data();
    const auto& xc = c.data();
    auto& y = out.data_mut();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) y[(size_t)i * n + j] = xm[(size_t)i * n + j] * xc[i];
    check_finite(out, "mul_rowscale");
    record_entry({m, c}, out, [m, c](const Value& g, GradSink& sink) {
        if (sink.wants(m)) sink.add(m, mul_rowscale(g, c));
        if (sink.wants(c)) sink.add(c, row_sums(mul(g, m)));
    });
    return out;
}

namespace {

// C (M,N) += A (M,K) * B (K,N); row-major, 4-row register tile.
void gemm_nn(int M, int N, int K, const real* A, const real* B, real* C) {
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        for (int n = 0; n < N; ++n) {
            real a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            const real* b = B + n;
            for (int k = 0; k < K; ++k) {
                real bv = b[(size_t)k * N];
                a0 += A[(size_t)(m + 0) * K + k] * bv;
                a1 += A[(size_t)(m + 1) * K + k] * bv;
                a2 += A[(size_t)(m + 2) * K + k] * bv;
                a3 += A[(size_t)(m + 3) * K + k] * bv;
            }
            C[(size_t)(m + 0) * N + n] += a0;
            C[(size_t)(m + 1) * N + n] += a1;
            C[(size_t)(m + 2) * N + n] += a2;
            C[(size_t)(m + 3) * N + n] += a3;
        }
    }
    for (; m < M; ++m)
        for (int n = 0; n < N; ++n) {
            real acc = 0;
            for (int k = 0; k < K; ++k) acc += A[(size_t)m * K + k] * B[(size_t)k * N + n];
            C[(size_t)m * N + n] += acc;
        }
}

// C (M,N) += A (M,K) * B^T, with B stored (N,K): pure dot products.
void gemm_nt(int M, int N, int K, const real* A, const real* B, real* C) {
    for (int m = 0; m < M; ++m) {
        const real* a = A + (size_t)m * K;
        int n = 0;
        for (; n + 2 <= N; n += 2) {
            const real* b0 = B + (size_t)n * K;
            const real* b1 = b0 + K;
            real s0 = 0, s1 = 0;
            for (int k = 0; k < K; ++k) {
                s0 += a[k] * b0[k];
                s1 += a[k] * b1[k];
            }
            C[(size_t)m * N + n] += s0;
            C[(size_t)m * N + n + 1] += s1;
        }
        for (; n < N; ++n) {
            const real* b = B + (size_t)n * K;
            real s = 0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            C[(size_t)m * N + n] += s;
        }
    }
}

// C (M,N) += A^T * B, with A stored (K,M): rank-1 updates, contiguous rows.
void gemm_tn(int M, int N, int K, const real* A, const real* B, real* C) {
    for (int k = 0; k < K; ++k) {
        const real* a = A + (size_t)k * M;
        const real* b = B + (size_t)k * N;
        for (int m = 0; m < M; ++m) {
            real av = a[m];
            if (av == 0.0) continue;
            real* c = C + (size_t)m * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
    require(a.shape().rank == 2 && b.shape().rank == 2, "matmul needs rank 2");
    int M = a.shape().dims[0], K = a.shape().dims[1];
    require(b.shape().dims[0] == K, "matmul inner dim mismatch");
    int N = b.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat(M, N));
    gemm_nn(M, N, K, a.data().data(), b.data().data(), out.data_mut().data());
    check_finite(out, "matmul");
    record_entry({a, b}, out, [a, b](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, matmul_nt(g, b));
        if (sink.wants(b)) sink.add(b, matmul_tn(a, g));
    });
    return out;
}

Value matmul_nt(const Value& a, const Value& b) {
    require(a.shape().rank == 2 && b.shape().rank == 2, "matmul_nt needs rank 2");
    int M = a.shape().dims[0], K = a.shape().dims[1];
    require(b.shape().dims[1] == K, "matmul_nt inner dim mismatch");
    int N = b.shape().dims[0];
    Value out = Value::zeros(TensorShape::mat(M, N));
    gemm_nt(M, N, K, a.data().data(), b.data().data(), out.data_mut().data());
    check_finite(out, "matmul_nt");
    record_entry({a, b}, out, [a, b](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, matmul(g, b));
        if (sink.wants(b)) sink.add(b, matmul_tn(g, a));
    });
    return out;
}

Value matmul_tn(const Value& a, const Value& b) {
    require(a.shape().rank == 2 && b.shape().rank == 2, "matmul_tn needs rank 2");
    int K = a.shape().dims[0], M = a.shape().dims[1];
    require(b.shape().dims[0] == K, "matmul_tn inner dim mismatch");
    int N = b.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat(M, N));
    gemm_tn(M, N, K, a.data().data(), b.data().data(), out.data_mut().data());
    check_finite(out, "matmul_tn");
    record_entry({a, b}, out, [a, b](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, matmul_nt(b, g));
        if (sink.wants(b)) sink.add(b, matmul(a, g));
    });
    return out;
}

Value reshape(const Value& a, TensorShape s) {
    require(s.numel() == a.numel(), "reshape numel mismatch");
    Value out = Value::from(s, a.data());
    record_entry({a}, out, [a, s](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, reshape(g, a.shape()));
    });
    return out;
}

Value concat_cols(const Value& a, const Value& b) {
    require(a.shape().rank == 2 && b.shape().rank == 2, "concat_cols needs rank 2");
    require(a.shape().dims[0] == b.shape().dims[0], "concat_cols row mismatch");
    int m = a.shape().dims[0], na = a.shape().dims[1], nb = b.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat(m, na + nb));
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i) {
        std::copy_n(&xa[(size_t)i * na], na, &y[(size_t)i * (na + nb)]);
        std::copy_n(&xb[(size_t)i * nb], nb, &y[(size_t)i * (na + nb) + na]);
    }
    record_entry({a, b}, out, [a, b, na, nb](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, slice_cols(g, 0, na));
        if (sink.wants(b)) sink.add(b, slice_cols(g, na, na + nb));
    });
    return out;
}

Value concat_rows(const Value& a, const Value& b) {
    require(a.shape().rank == 2 && b.shape().rank == 2, "concat_rows needs rank 2");
    require(a.shape().dims[1] == b.shape().dims[1], "concat_rows col mismatch");
    int ma = a.shape().dims[0], mb = b.shape().dims[0], n = a.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat(ma + mb, n));
    auto& y = out.data_mut();
    std::copy(a.data().begin(), a.data().end(), y.begin());
    std::copy(b.data().begin(), b.data().end(), y.begin() + (size_t)ma * n);
    record_entry({a, b}, out, [a, b, ma, mb](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, slice_rows(g, 0, ma));
        if (sink.wants(b)) sink.add(b, slice_rows(g, ma, ma + mb));
    });
    return out;
}

Value slice_cols(const Value& a, int c0, int c1) {
    require(a.shape().rank == 2, "slice_cols needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    require(c0 >= 0 && c1 <= n && c0 < c1, "slice_cols range");
    int w = c1 - c0;
    Value out = Value::zeros(TensorShape::mat(m, w));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i) std::copy_n(&x[(size_t)i * n + c0], w, &y[(size_t)i * w]);
    record_entry({a}, out, [a, c0, n](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, pad_cols(g, c0, n));
    });
    return out;
}

Value slice_rows(const Value& a, int r0, int r1) {
    require(a.shape().rank == 2, "slice_rows needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    require(r0 >= 0 && r1 <= m && r0 < r1, "slice_rows range");
    Value out = Value::zeros(TensorShape::mat(r1 - r0, n));
    std::copy_n(&a.data()[(size_t)r0 * n], (size_t)(r1 - r0) * n, out.data_mut().begin());
    record_entry({a}, out, [a, r0, m](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, pad_rows(g, r0, m));
    });
    return out;
}

Value pad_cols(const Value& a, int c0, int total) {
    require(a.shape().rank == 2, "pad_cols needs rank 2");
    int m = a.shape().dims[0], w = a.shape().dims[1];
    require(c0 >= 0 && c0 + w <= total, "pad_cols range");
    Value out = Value::zeros(TensorShape::mat(m, total));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i) std::copy_n(&x[(size_t)i * w], w, &y[(size_t)i * total + c0]);
    record_entry({a}, out, [a, c0, w](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, slice_cols(g, c0, c0 + w));
    });
    return out;
}

Value pad_rows(const Value& a, int r0, int total) {
    require(a.shape().rank == 2, "pad_rows needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    require(r0 >= 0 && r0 + m <= total, "pad_rows range");
    Value out = Value::zeros(TensorShape::mat(total, n));
    std::copy(a.data().begin(), a.data().end(), out.data_mut().begin() + (size_t)r0 * n);
    record_entry({a}, out, [a, r0, m](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, slice_rows(g, r0, r0 + m));
    });
    return out;
}

Value flip_cols(const Value& a) {
    require(a.shape().rank == 2, "flip_cols needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    Value out = Value::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[(size_t)i * n + j] = x[(size_t)i * n + (n - 1 - j)];
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, flip_cols(g));
    });
    return out;
}

Value transpose(const Value& a) {
    require(a.shape().rank == 2, "transpose needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat(n, m));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[(size_t)j * m + i] = x[(size_t)i * n + j];
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, transpose(g));
    });
    return out;
}

Value sum_mid(const Value& a) {
    require(a.shape().rank == 3, "sum_mid needs rank 3");
    int A = a.shape().dims[0], B = a.shape().dims[1], C = a.shape().dims[2];
    Value out = Value::zeros(TensorShape::mat(A, C));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < B; ++j)
            for (int k = 0; k < C; ++k)
                y[(size_t)i * C + k] += x[((size_t)i * B + j) * C + k];
    record_entry({a}, out, [a, B](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, rep_mid(g, B));
    });
    return out;
}

Value rep_mid(const Value& a, int b) {
    require(a.shape().rank == 2, "rep_mid needs rank 2");
    int A = a.shape().dims[0], C = a.shape().dims[1];
    Value out = Value::zeros(TensorShape{A, b, C});
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < b; ++j)
            std::copy_n(&x[(size_t)i * C], C, &y[((size_t)i * b + j) * C]);
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, sum_mid(g));
    });
    return out;
}

Value gather_rows(const Value& a, std::vector<int> idx) {
    require(a.shape().rank == 2, "gather_rows needs rank 2");
    int n = a.shape().dims[0], k = a.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat((int)idx.size(), k));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < n, "gather_rows index out of range");
        std::copy_n(&x[(size_t)idx[i] * k], k, &y[i * k]);
    }
    record_entry({a}, out, [a, idx, n](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, scatter_add_rows(g, idx, n));
    });
    return out;
}

Value scatter_add_rows(const Value& a, std::vector<int> idx, int rows) {
    require(a.shape().rank == 2, "scatter_add_rows needs rank 2");
    require((int)idx.size() == a.shape().dims[0], "scatter_add_rows index count");
    int k = a.shape().dims[1];
    Value out = Value::zeros(TensorShape::mat(rows, k));
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < k; ++j) y[(size_t)idx[i] * k + j] += x[i * k + j];
    record_entry({a}, out, [a, idx](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, gather_rows(g, idx));
    });
    return out;
}

Value softmax_rows(const Value& a) {
    require(a.shape().rank == 2, "softmax_rows needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    require(n > 0, "softmax over empty axis");
    Value out = Value::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i) {
        const real* row = &x[(size_t)i * n];
        real mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        real s = 0;
        for (int j = 0; j < n; ++j) {
            real e = std::exp(row[j] - mx);
            y[(size_t)i * n + j] = e;
            s += e;
        }
        for (int j = 0; j < n; ++j) y[(size_t)i * n + j] /= s;
    }
    check_finite(out, "softmax_rows");
    record_entry({a}, out, [a, out, n](const Value& g, GradSink& sink) {
        if (sink.wants(a)) {
            // dz = (g - rowsum(g*y)) * y
            Value gy = mul(g, out);
            Value rs = rep_cols(row_sums(gy), n);
            sink.add(a, mul(sub(g, rs), out));
        }
    });
    return out;
}

Value cumsum_rows_exclusive(const Value& a) {
    require(a.shape().rank == 2, "cumsum_rows_exclusive needs rank 2");
    int m = a.shape().dims[0], n = a.shape().dims[1];
    Value out = Value::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data_mut();
    for (int i = 0; i < m; ++i) {
        real acc = 0;
        for (int j = 0; j < n; ++j) {
            y[(size_t)i * n + j] = acc;
            acc += x[(size_t)i * n + j];
        }
    }
    record_entry({a}, out, [a](const Value& g, GradSink& sink) {
        if (sink.wants(a)) sink.add(a, flip_cols(cumsum_rows_exclusive(flip_cols(g))));
    });
    return out;
}

Value laplace_density(const Value& s, const Value& beta) {
    require(beta.numel() == 1, "laplace_density: beta must be scalar");
    real b = beta.data()[0];
    require(b > 0, "laplace_density: beta must be positive");
    Value out = Value::zeros(s.shape());
    const auto& x = s.data();
    auto& y = out.data_mut();
    for (size_t i = 0; i < x.size(); ++i) {
        // Psi_beta(-s): CDF of the Laplace distribution evaluated at -s.
        y[i] = x[i] >= 0 ? 0.5 / b * std::exp(-x[i] / b)
                         : (1.0 - 0.5 * std::exp(x[i] / b)) / b;
    }
    check_finite(out, "laplace_density");
    record_entry({s, beta}, out, [s, beta, out](const Value& g, GradSink& sink) {
        real b = beta.data()[0];
        const auto& x = s.data();
        const auto& sig = out.data();
        if (sink.wants(s)) {
            Value dsd = Value::zeros(s.shape());
            auto& d = dsd.data_mut();
            for (size_t i = 0; i < x.size(); ++i)
                d[i] = -0.5 / (b * b) * std::exp(-std::abs(x[i]) / b);
            sink.add(s, mul(g, dsd));
        }
        if (sink.wants(beta)) {
            Value dbd = Value::zeros(s.shape());
            auto& d = dbd.data_mut();
            for (size_t i = 0; i < x.size(); ++i) {
                if (x[i] >= 0) {
                    d[i] = sig[i] * (x[i] - b) / (b * b);
                } else {
                    d[i] = -sig[i] / b + x[i] * std::exp(x[i] / b) / (2.0 * b * b * b);
                }
            }
            sink.add(beta, reshape(sum_all(mul(g, dbd)), beta.shape()));
        }
    });
    return out;
}

namespace {

void forbid_create_graph(const GradSink& sink, const char* op) {
    if (sink.create_graph())
        throw std::logic_error(std::string("op '") + op + "' has a first-order-only backward");
}

}  // namespace

Value conv2d_3x3(const Value& x, const Value& w, const Value& b) {
    require(x.shape().rank == 3 && w.shape().rank == 3, "conv2d shapes");
    int ci = x.shape().dims[0], h = x.shape().dims[1], wd = x.shape().dims[2];
    int co = w.shape().dims[0];
    require(w.shape().dims[1] == ci && w.shape().dims[2] == 9, "conv2d kernel shape");
    require(b.shape().rank == 1 && b.shape().dims[0] == co, "conv2d bias shape");
    Value out = Value::zeros(TensorShape{co, h, wd});
    const real* X = x.data().data();
    const real* W = w.data().data();
    const real* B = b.data().data();
    real* Y = out.data_mut().data();
    const size_t plane = (size_t)h * wd;
    for (int o = 0; o < co; ++o) {
        real* yo = Y + o * plane;
        for (size_t i = 0; i < plane; ++i) yo[i] = B[o];
        for (int c = 0; c < ci; ++c) {
            const real* xc = X + c * plane;
            const real* wk = W + ((size_t)o * ci + c) * 9;
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                    real wv = wk[(ky + 1) * 3 + (kx + 1)];
                    if (wv == 0.0) continue;
                    int y0 = std::max(0, -ky), y1 = std::min(h, h - ky);
                    int x0 = std::max(0, -kx), x1 = std::min(wd, wd - kx);
                    for (int yy = y0; yy < y1; ++yy) {
                        real* yrow = yo + (size_t)yy * wd;
                        const real* xrow = xc + (size_t)(yy + ky) * wd + kx;
                        for (int xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx];
                    }
                }
            }
        }
    }
    check_finite(out, "conv2d_3x3");
    record_entry({x, w, b}, out, [x, w, b, ci, co, h, wd](const Value& g, GradSink& sink) {
        forbid_create_graph(sink, "conv2d_3x3");
        const size_t plane = (size_t)h * wd;
        const real* G = g.data().data();
        if (sink.wants(x)) {
            Value dx = Value::zeros(x.shape());
            real* DX = dx.data_mut().data();
            const real* W = w.data().data();
            for (int o = 0; o < co; ++o) {
                const real* go = G + o * plane;
                for (int c = 0; c < ci; ++c) {
                    real* dxc = DX + c * plane;
                    const real* wk = W + ((size_t)o * ci + c) * 9;
                    for (int ky = -1; ky <= 1; ++ky) {
                        for (int kx = -1; kx <= 1; ++kx) {
                            real wv = wk[(ky + 1) * 3 + (kx + 1)];
                            if (wv == 0.0) continue;
                            int y0 = std::max(0, -ky), y1 = std::min(h, h - ky);
                            int x0 = std::max(0, -kx), x1 = std::min(wd, wd - kx);
                            for (int yy = y0; yy < y1; ++yy) {
                                const real* grow = go + (size_t)yy * wd;
                                real* dxrow = dxc + (size_t)(yy + ky) * wd + kx;
                                for (int xx = x0; xx < x1; ++xx) dxrow[xx] += wv * grow[xx];
                            }
                        }
                    }
                }
            }
            sink.add(x, dx);
        }
        if (sink.wants(w)) {
            Value dw = Value::zeros(w.shape());
            real* DW = dw.data_mut().data();
            const real* X = x.data().data();
            for (int o = 0; o < co; ++o) {
                const real* go = G + o * plane;
                for (int c = 0; c < ci; ++c) {
                    const real* xc = X + c * plane;
                    real* wk = DW + ((size_t)o * ci + c) * 9;
                    for (int ky = -1; ky <= 1; ++ky) {
                        for (int kx = -1; kx <= 1; ++kx) {
                            int y0 = std::max(0, -ky), y1 = std::min(h, h - ky);
                            int x0 = std::max(0, -kx), x1 = std::min(wd, wd - kx);
                            real acc = 0;
                            for (int yy = y0; yy < y1; ++yy) {
                                const real* grow = go + (size_t)yy * wd;
                                const real* xrow = xc + (size_t)(yy + ky) * wd + kx;
                                for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
                            }
                            wk[(ky + 1) * 3 + (kx + 1)] = acc;
                        }
                    }
                }
            }
            sink.add(w, dw);
        }
        if (sink.wants(b)) {
            Value db = Value::zeros(b.shape());
            real* DB = db.data_mut().data();
            for (int o = 0; o < co; ++o) {
                real acc = 0;
                const real* go = G + o * plane;
                for (size_t i = 0; i < plane; ++i) acc += go[i];
                DB[o] = acc;
            }
            sink.add(b, db);
        }
    });
    return out;
}

Value avgpool2(const Value& x) {
    require(x.shape().rank == 3, "avgpool2 needs rank 3");
    int c = x.shape().dims[0], h = x.shape().dims[1], w = x.shape().dims[2];
    require(h % 2 == 0 && w % 2 == 0, "avgpool2 needs even sides");
    int oh = h / 2, ow = w / 2;
    Value out = Value::zeros(TensorShape{c, oh, ow});
    const real* X = x.data().data();
    real* Y = out.data_mut().data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                const real* p = X + ((size_t)ch * h + 2 * y) * w + 2 * xx;
                Y[((size_t)ch * oh + y) * ow + xx] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
            }
    record_entry({x}, out, [x, c, h, w, oh, ow](const Value& g, GradSink& sink) {
        forbid_create_graph(sink, "avgpool2");
        if (!sink.wants(x)) return;
        Value dx = Value::zeros(x.shape());
        const real* G = g.data().data();
        real* DX = dx.data_mut().data();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    real v = 0.25 * G[((size_t)ch * oh + y) * ow + xx];
                    real* p = DX + ((size_t)ch * h + 2 * y) * w + 2 * xx;
                    p[0] += v;
                    p[1] += v;
                    p[w] += v;
                    p[w + 1] += v;
                }
        sink.add(x, dx);
    });
    return out;
}

Value upsample2(const Value& x) {
    require(x.shape().rank == 3, "upsample2 needs rank 3");
    int c = x.shape().dims[0], h = x.shape().dims[1], w = x.shape().dims[2];
    Value out = Value::zeros(TensorShape{c, 2 * h, 2 * w});
    const real* X = x.data().data();
    real* Y = out.data_mut().data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                Y[((size_t)ch * 2 * h + y) * 2 * w + xx] = X[((size_t)ch * h + y / 2) * w + xx / 2];
    record_entry({x}, out, [x, c, h, w](const Value& g, GradSink& sink) {
        forbid_create_graph(sink, "upsample2");
        if (!sink.wants(x)) return;
        Value dx = Value::zeros(x.shape());
        const real* G = g.data().data();
        real* DX = dx.data_mut().data();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    DX[((size_t)ch * h + y / 2) * w + xx / 2] +=
                        G[((size_t)ch * 2 * h + y) * 2 * w + xx];
        sink.add(x, dx);
    });
    return out;
}

Value global_avgpool(const Value& x) {
    require(x.shape().rank == 3, "global_avgpool needs rank 3");
    int c = x.shape().dims[0], h = x.shape().dims[1], w = x.shape().dims[2];
    size_t plane = (size_t)h * w;
    Value out = Value::zeros(TensorShape::vec(c));
    const real* X = x.data().data();
    real* Y = out.data_mut().data();
    for (int ch = 0; ch < c; ++ch) {
        real acc = 0;
        for (size_t i = 0; i < plane; ++i) acc += X[ch * plane + i];
        Y[ch] = acc / (real)plane;
    }
    record_entry({x}, out, [x, c, plane](const Value& g, GradSink& sink) {
        forbid_create_graph(sink, "global_avgpool");
        if (!sink.wants(x)) return;
        Value dx = Value::zeros(x.shape());
        const real* G = g.data().data();
        real* DX = dx.data_mut().data();
        for (int ch = 0; ch < c; ++ch) {
            real v = G[ch] / (real)plane;
            for (size_t i = 0; i < plane; ++i) DX[ch * plane + i] = v;
        }
        sink.add(x, dx);
    });
    return out;
}

namespace {

struct BilinearCorner {
    int x0, y0;
    real fx, fy;
    bool in;
};

BilinearCorner bilinear_setup(real u, real v, int w, int h) {
    BilinearCorner c;
    c.in = u >= 0.0 && v >= 0.0 && u <= (real)(w - 1) && v <= (real)(h - 1);
    real uc = std::min((real)(w - 1), std::max((real)0, u));
    real vc = std::min((real)(h - 1), std::max((real)0, v));
    c.x0 = std::min(w - 2, (int)uc);
    c.y0 = std::min(h - 2, (int)vc);
    if (w == 1) c.x0 = 0;
    if (h == 1) c.y0 = 0;
    c.fx = uc - c.x0;
    c.fy = vc - c.y0;
    return c;
}

}  // namespace

Value bilinear_sample(const Value& img, const Value& uv, const std::vector<uint8_t>& valid,
                      std::vector<uint8_t>& oob) {
    require(img.shape().rank == 3, "bilinear_sample image must be (C,H,W)");
    require(uv.shape().rank == 2 && uv.shape().dims[1] == 2, "bilinear_sample uv must be (N,2)");
    int c = img.shape().dims[0], h = img.shape().dims[1], w = img.shape().dims[2];
    int n = uv.shape().dims[0];
    require(valid.empty() || (int)valid.size() == n, "bilinear_sample valid mask size");
    oob.assign(n, 0);
    Value out = Value::zeros(TensorShape::mat(n, c));
    const real* I = img.data().data();
    const real* UV = uv.data().data();
    real* Y = out.data_mut().data();
    size_t plane = (size_t)h * w;
    for (int i = 0; i < n; ++i) {
        bool ok = valid.empty() || valid[i];
        BilinearCorner bc = bilinear_setup(UV[2 * i], UV[2 * i + 1], w, h);
        if (!ok || !bc.in) {
            oob[i] = 1;
            continue;
        }
        size_t base = (size_t)bc.y0 * w + bc.x0;
        real w00 = (1 - bc.fx) * (1 - bc.fy), w10 = bc.fx * (1 - bc.fy);
        real w01 = (1 - bc.fx) * bc.fy, w11 = bc.fx * bc.fy;
        for (int ch = 0; ch < c; ++ch) {
            const real* p = I + ch * plane + base;
            Y[(size_t)i * c + ch] = w00 * p[0] + w10 * p[1] + w01 * p[w] + w11 * p[w + 1];
        }
    }
    check_finite(out, "bilinear_sample");
    std::vector<uint8_t> oob_copy = oob;
    record_entry({img, uv}, out, [img, uv, oob_copy, c, h, w, n](const Value& g, GradSink& sink) {
        forbid_create_graph(sink, "bilinear_sample");
        const real* G = g.data().data();
        const real* UV = uv.data().data();
        const real* I = img.data().data();
        size_t plane = (size_t)h * w;
        if (sink.wants(img)) {
            Value di = Value::zeros(img.shape());
            real* DI = di.data_mut().data();
            for (int i = 0; i < n; ++i) {
                if (oob_copy[i]) continue;
                BilinearCorner bc = bilinear_setup(UV[2 * i], UV[2 * i + 1], w, h);
                size_t base = (size_t)bc.y0 * w + bc.x0;
                real w00 = (1 - bc.fx) * (1 - bc.fy), w10 = bc.fx * (1 - bc.fy);
                real w01 = (1 - bc.fx) * bc.fy, w11 = bc.fx * bc.fy;
                for (int ch = 0; ch < c; ++ch) {
                    real gv = G[(size_t)i * c + ch];
                    real* p = DI + ch * plane + base;
                    p[0] += w00 * gv;
                    p[1] += w10 * gv;
                    p[w] += w01 * gv;
                    p[w + 1] += w11 * gv;
                }
            }
            sink.add(img, di);
        }
        if (sink.wants(uv)) {
            Value duv = Value::zeros(uv.shape());
            real* D = duv.data_mut().data();
            for (int i = 0; i < n; ++i) {
                if (oob_copy[i]) continue;
                BilinearCorner bc = bilinear_setup(UV[2 * i], UV[2 * i + 1], w, h);
                size_t base = (size_t)bc.y0 * w + bc.x0;
                real du = 0, dv = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const real* p = I + ch * plane + base;
                    real gv = G[(size_t)i * c + ch];
                    du += gv * ((p[1] - p[0]) * (1 - bc.fy) + (p[w + 1] - p[w]) * bc.fy);
                    dv += gv * ((p[w] - p[0]) * (1 - bc.fx) + (p[w + 1] - p[1]) * bc.fx);
                }
                D[2 * i] = du;
                D[2 * i + 1] = dv;
            }
            sink.add(uv, duv);
        }
    });
    return out;
}

Value affine_rows(const Value& x, std::vector<Mat3> A, std::vector<Vec3> t) {
    require(x.shape().rank == 2 && x.shape().dims[1] == 3, "affine_rows needs (N,3)");
    int n = x.shape().dims[0];
    require((int)A.size() == n && (int)t.size() == n, "affine_rows coefficient count");
    Value out = Value::zeros(x.shape());
    const real* X = x.data().data();
    real* Y = out.data_mut().data();
    for (int i = 0; i < n; ++i) {
        Vec3 p{X[3 * i], X[3 * i + 1], X[3 * i + 2]};
        Vec3 q = A[i] * p + t[i];
        Y[3 * i] = q.x;
        Y[3 * i + 1] = q.y;
        Y[3 * i + 2] = q.z;
    }
    check_finite(out, "affine_rows");
    record_entry({x}, out, [x, A, n](const Value& g, GradSink& sink) {
        forbid_create_graph(sink, "affine_rows");
        if (!sink.wants(x)) return;
        Value dx = Value::zeros(x.shape());
        const real* G = g.data().data();
        real* D = dx.data_mut().data();
        for (int i = 0; i < n; ++i) {
            Vec3 gv{G[3 * i], G[3 * i + 1], G[3 * i + 2]};
            Vec3 d = A[i].transposed() * gv;
            D[3 * i] = d.x;
            D[3 * i + 1] = d.y;
            D[3 * i + 2] = d.z;
        }
        sink.add(x, dx);
    });
    return out;
}

}  // namespace s3f::nn::ops
