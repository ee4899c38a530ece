#include <cmath>

#include "s3f/nn.hpp"

namespace s3f::nn {

using namespace ops;

namespace {

Value rand_value(TensorShape s, Rng& rng, real lo = -1.0, real hi = 1.0) {
    Value v = Value::zeros(s);
    for (real& x : v.data_mut()) x = rng.uniform(lo, hi);
    v.set_requires_grad(true);
    return v;
}

// Wraps a Value-function into a scalar loss with a fixed random projection so
// every output coordinate influences the loss.
Value project_scalar(const Value& y, Rng& rng) {
    Value w = Value::zeros(y.shape());
    for (real& x : w.data_mut()) x = rng.uniform(0.25, 1.0);
    return sum_all(mul(y, w));
}

}  // namespace

std::vector<OpCheck> op_grad_checks(uint64_t seed) {
    std::vector<OpCheck> checks;
    auto add_check = [&](const std::string& name, real threshold, std::function<real()> run) {
        checks.push_back({name, threshold, std::move(run)});
    };

    struct Unary {
        const char* name;
        Value (*fn)(const Value&);
        real lo, hi;
    };
    const Unary unaries[] = {
        {"neg", [](const Value& v) { return neg(v); }, -1, 1},
        {"exp", [](const Value& v) { return ops::exp(v); }, -1, 1},
        {"log", [](const Value& v) { return ops::log(v); }, 0.2, 2},
        {"sqrt", [](const Value& v) { return ops::sqrt(v); }, 0.2, 2},
        {"square", [](const Value& v) { return square(v); }, -1, 1},
        {"abs", [](const Value& v) { return ops::abs(v); }, 0.1, 1},
        {"sin", [](const Value& v) { return ops::sin(v); }, -1, 1},
        {"cos", [](const Value& v) { return ops::cos(v); }, -1, 1},
        {"tanh", [](const Value& v) { return ops::tanh(v); }, -1, 1},
        {"sigmoid", [](const Value& v) { return sigmoid(v); }, -2, 2},
        {"relu", [](const Value& v) { return relu(v); }, 0.05, 1},
        {"leaky_relu", [](const Value& v) { return leaky_relu(v); }, 0.05, 1},
        {"swish", [](const Value& v) { return swish(v); }, -2, 2},
        {"softplus", [](const Value& v) { return softplus(v); }, -2, 2},
    };
    for (const Unary& u : unaries) {
        add_check(u.name, 1e-5, [u, seed]() {
            Rng rng(seed);
            Value x = rand_value(TensorShape::mat(4, 5), rng, u.lo, u.hi);
            Rng proj = rng.fork(1);
            Value inputs[] = {x};
            return grad_check([&]() { Rng p2 = proj; return project_scalar(u.fn(x), p2); },
                              inputs);
        });
    }

    add_check("add_sub_mul_div", 1e-5, [seed]() {
        Rng rng(seed + 1);
        Value a = rand_value(TensorShape::mat(3, 4), rng, 0.5, 1.5);
        Value b = rand_value(TensorShape::mat(3, 4), rng, 0.5, 1.5);
        Rng proj = rng.fork(1);
        Value inputs[] = {a, b};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                return project_scalar(div(add(mul(a, b), sub(a, b)), add_const(square(b), 0.5)),
                                      p2);
            },
            inputs);
    });

    add_check("clamp", 1e-5, [seed]() {
        Rng rng(seed + 2);
        Value a = rand_value(TensorShape::vec(32), rng, -2, 2);
        // Keep coordinates away from the clamp kinks.
        for (real& x : a.data_mut())
            if (std::abs(std::abs(x) - 1.0) < 0.05) x += 0.1;
        Rng proj = rng.fork(1);
        Value inputs[] = {a};
        return grad_check([&]() { Rng p2 = proj; return project_scalar(clamp(a, -1, 1), p2); },
                          inputs);
    });

    add_check("reductions_broadcasts", 1e-5, [seed]() {
        Rng rng(seed + 3);
        Value a = rand_value(TensorShape::mat(4, 6), rng);
        Value v = rand_value(TensorShape::vec(6), rng);
        Value c = rand_value(TensorShape::vec(4), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {a, v, c};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                Value m = mul_rowscale(add_rowvec(a, v), c);
                Value t = add(rep_rows(col_sums(m), 4), rep_cols(row_sums(m), 6));
                Rng p3 = proj.fork(2);
                return add(project_scalar(t, p2),
                           project_scalar(rep_all(sum_all(a), {2, 3}), p3));
            },
            inputs);
    });

    add_check("matmul_family", 1e-5, [seed]() {
        Rng rng(seed + 4);
        Value a = rand_value(TensorShape::mat(4, 3), rng);
        Value b = rand_value(TensorShape::mat(3, 5), rng);
        Value bt = rand_value(TensorShape::mat(5, 3), rng);
        Value at = rand_value(TensorShape::mat(3, 4), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {a, b, bt, at};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                Value y = add(add(matmul(a, b), matmul_nt(a, bt)), matmul_tn(at, b));
                return project_scalar(y, p2);
            },
            inputs);
    });

    add_check("shape_surgery", 1e-5, [seed]() {
        Rng rng(seed + 5);
        Value a = rand_value(TensorShape::mat(4, 6), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {a};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                Value u = concat_cols(slice_cols(a, 0, 2), flip_cols(slice_cols(a, 2, 6)));
                Value w = concat_rows(slice_rows(u, 0, 2), slice_rows(u, 2, 4));
                Value t = transpose(pad_cols(pad_rows(w, 0, 4), 1, 8));
                return project_scalar(reshape(t, TensorShape{2, 4, 4}), p2);
            },
            inputs);
    });

    add_check("gather_scatter", 1e-5, [seed]() {
        Rng rng(seed + 6);
        Value a = rand_value(TensorShape::mat(5, 3), rng);
        std::vector<int> idx = {4, 0, 0, 2, 3, 1};
        Rng proj = rng.fork(1);
        Value inputs[] = {a};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                return project_scalar(scatter_add_rows(gather_rows(a, idx), {0, 1, 2, 0, 1, 2}, 3),
                                      p2);
            },
            inputs);
    });

    add_check("softmax_rows", 1e-5, [seed]() {
        Rng rng(seed + 7);
        Value a = rand_value(TensorShape::mat(4, 8), rng, -2, 2);
        Rng proj = rng.fork(1);
        Value inputs[] = {a};
        return grad_check([&]() { Rng p2 = proj; return project_scalar(softmax_rows(a), p2); },
                          inputs);
    });

    add_check("cumsum_rows_exclusive", 1e-5, [seed]() {
        Rng rng(seed + 8);
        Value a = rand_value(TensorShape::mat(3, 7), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {a};
        return grad_check(
            [&]() { Rng p2 = proj; return project_scalar(cumsum_rows_exclusive(a), p2); },
            inputs);
    });

    add_check("sum_mid_rep_mid", 1e-5, [seed]() {
        Rng rng(seed + 9);
        Value a = rand_value(TensorShape{3, 4, 2}, rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {a};
        return grad_check(
            [&]() { Rng p2 = proj; return project_scalar(rep_mid(sum_mid(a), 2), p2); }, inputs);
    });

    add_check("laplace_density", 1e-5, [seed]() {
        Rng rng(seed + 10);
        Value s = rand_value(TensorShape::vec(16), rng, -0.3, 0.3);
        Value beta = Value::scalar(0.1);
        beta.set_requires_grad(true);
        Rng proj = rng.fork(1);
        Value inputs[] = {s, beta};
        return grad_check(
            [&]() { Rng p2 = proj; return project_scalar(laplace_density(s, beta), p2); },
            inputs);
    });

    add_check("conv2d_3x3", 1e-4, [seed]() {
        Rng rng(seed + 11);
        Value x = rand_value(TensorShape{3, 6, 6}, rng);
        Value w = rand_value(TensorShape{4, 3, 9}, rng, -0.5, 0.5);
        Value b = rand_value(TensorShape::vec(4), rng, -0.2, 0.2);
        Rng proj = rng.fork(1);
        Value inputs[] = {x, w, b};
        return grad_check(
            [&]() { Rng p2 = proj; return project_scalar(conv2d_3x3(x, w, b), p2); }, inputs);
    });

    add_check("pool_upsample_gap", 1e-5, [seed]() {
        Rng rng(seed + 12);
        Value x = rand_value(TensorShape{2, 4, 4}, rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {x};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                Value y = upsample2(avgpool2(x));
                Rng p3 = proj.fork(2);
                return add(project_scalar(y, p2), project_scalar(global_avgpool(x), p3));
            },
            inputs);
    });

    add_check("bilinear_sample", 1e-4, [seed]() {
        Rng rng(seed + 13);
        Value img = rand_value(TensorShape{3, 5, 5}, rng);
        Value uv = Value::zeros(TensorShape::mat(4, 2));
        auto& u = uv.data_mut();
        u = {0.4, 0.7, 2.3, 3.6, 1.1, 1.9, 3.2, 0.4};
        uv.set_requires_grad(true);
        Rng proj = rng.fork(1);
        Value inputs[] = {img, uv};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                std::vector<uint8_t> oob;
                return project_scalar(bilinear_sample(img, uv, {}, oob), p2);
            },
            inputs);
    });

    add_check("affine_rows", 1e-5, [seed]() {
        Rng rng(seed + 14);
        Value x = rand_value(TensorShape::mat(3, 3), rng);
        std::vector<Mat3> A(3);
        std::vector<Vec3> t(3);
        for (int i = 0; i < 3; ++i) {
            A[i] = rotation_from_axis_angle({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
            t[i] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        }
        Rng proj = rng.fork(1);
        Value inputs[] = {x};
        return grad_check(
            [&]() { Rng p2 = proj; return project_scalar(affine_rows(x, A, t), p2); }, inputs);
    });

    add_check("linear_layer", 1e-5, [seed]() {
        Rng rng(seed + 15);
        Value x = rand_value(TensorShape::mat(4, 6), rng);
        Value W = rand_value(TensorShape::mat(3, 6), rng);
        Value b = rand_value(TensorShape::vec(3), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {x, W, b};
        return grad_check([&]() { Rng p2 = proj; return project_scalar(linear(x, W, b), p2); },
                          inputs);
    });

    add_check("positional_encoding", 1e-4, [seed]() {
        Rng rng(seed + 16);
        Value x = rand_value(TensorShape::mat(3, 3), rng, -0.5, 0.5);
        Rng proj = rng.fork(1);
        Value inputs[] = {x};
        return grad_check(
            [&]() { Rng p2 = proj; return project_scalar(positional_encoding(x), p2); }, inputs);
    });

    add_check("attention", 1e-4, [seed]() {
        Rng rng(seed + 17);
        Value q = rand_value(TensorShape::mat(3, 8), rng);
        Value k = rand_value(TensorShape::mat(6, 8), rng);
        Value v = rand_value(TensorShape::mat(6, 4), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {q, k, v};
        return grad_check([&]() { Rng p2 = proj; return project_scalar(attention(q, k, v), p2); },
                          inputs);
    });

    add_check("second_order_gradient_norm", 1e-3, [seed]() {
        // d/dW of || d(sum y)/dx || with y = tanh(x W^T) w: checks that
        // create_graph gradients are themselves differentiable.
        Rng rng(seed + 18);
        Value x = rand_value(TensorShape::mat(2, 3), rng);
        Value W = rand_value(TensorShape::mat(4, 3), rng);
        Rng proj = rng.fork(1);
        Value inputs[] = {W, x};
        return grad_check(
            [&]() {
                Rng p2 = proj;
                Tape* tape = Tape::active();
                Value y = ops::tanh(matmul_nt(x, W));
                if (tape) {
                    Value wrt[] = {x};
                    Value g = tape->gradient(sum_all(y), wrt, /*create_graph=*/true)[0];
                    return project_scalar(square(g), p2);
                }
                // FD re-evaluations run without a tape: use a local one.
                Tape local;
                TapeScope scope(local);
                Value y2 = ops::tanh(matmul_nt(x, W));
                Value wrt[] = {x};
                Value g = local.gradient(sum_all(y2), wrt, true)[0];
                return project_scalar(square(g), p2);
            },
            inputs);
    });

    return checks;
}

}  // namespace s3f::nn
