#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "s3f/nn.hpp"

using namespace s3f;
using namespace s3f::nn;
namespace fs = std::filesystem;

namespace {

Value randv(TensorShape s, Rng& rng, double lo = -1, double hi = 1, bool rg = true) {
    Value v = Value::zeros(s);
    for (real& x : v.data_mut()) x = rng.uniform(lo, hi);
    v.set_requires_grad(rg);
    return v;
}

}  // namespace

TEST_CASE("linear with identity weights is the identity") {
    Value x = Value::zeros(TensorShape::mat(2, 3));
    x.data_mut() = {1, 2, 3, 4, 5, 6};
    Value W = Value::zeros(TensorShape::mat(3, 3));
    W.data_mut() = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Value b = Value::zeros(TensorShape::vec(3));
    Value y = linear(x, W, b);
    for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("softmax of equal logits is uniform; rows sum to one") {
    Value x = Value::full(TensorShape::mat(2, 5), 0.7);
    Value y = ops::softmax_rows(x);
    for (real v : y.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

    Rng rng(3);
    Value z = randv(TensorShape::mat(8, 6), rng, -4, 4, false);
    Value sm = ops::softmax_rows(z);
    for (int i = 0; i < 8; ++i) {
        real s = 0;
        for (int j = 0; j < 6; ++j) {
            real v = sm.data()[i * 6 + j];
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("activation fixed points") {
    Value zero = Value::scalar(0.0);
    CHECK(ops::swish(zero).item() == 0.0);
    CHECK(ops::sigmoid(zero).item() == 0.5);
    CHECK(ops::relu(zero).item() == 0.0);
}

TEST_CASE("positional encoding") {
    SUBCASE("zero input: sines vanish, cosines are one") {
        Value x = Value::zeros(TensorShape::mat(1, 3));
        Value e = positional_encoding(x);
        CHECK(e.shape().dims[1] == 39);
        for (int j = 0; j < 3; ++j) CHECK(e.data()[j] == 0.0);
        for (int f = 0; f < 6; ++f)
            for (int j = 0; j < 3; ++j) {
                CHECK(e.data()[3 + 6 * f + j] == 0.0);        // sin block
                CHECK(e.data()[3 + 6 * f + 3 + j] == 1.0);    // cos block
            }
    }
    SUBCASE("gradient matches finite differences") {
        Rng rng(4);
        Value x = randv(TensorShape::mat(2, 3), rng, -0.5, 0.5);
        Value inputs[] = {x};
        real err = grad_check([&]() { return ops::mean_all(positional_encoding(x)); }, inputs);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("attention") {
    SUBCASE("single key/value returns that value for any query") {
        Rng rng(5);
        Value q = randv(TensorShape::mat(3, 4), rng, -2, 2, false);
        Value k = randv(TensorShape::mat(1, 4), rng, -2, 2, false);
        Value v = randv(TensorShape::mat(1, 6), rng, -2, 2, false);
        Value out = attention(q, k, v);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 6; ++j) CHECK(out.data()[i * 6 + j] == doctest::Approx(v.data()[j]));
    }
    SUBCASE("identical keys average the values") {
        Rng rng(6);
        Value q = randv(TensorShape::mat(2, 4), rng, -1, 1, false);
        Value k = Value::full(TensorShape::mat(5, 4), 0.3);
        Value v = randv(TensorShape::mat(5, 3), rng, -1, 1, false);
        Value out = attention(q, k, v);
        for (int j = 0; j < 3; ++j) {
            real mean = 0;
            for (int i = 0; i < 5; ++i) mean += v.data()[i * 3 + j];
            mean /= 5;
            CHECK(out.data()[j] == doctest::Approx(mean).epsilon(1e-9));
        }
    }
    SUBCASE("two keys reproduce the closed-form softmax mix") {
        // d = 1, q = 1, keys 0 and ln(4): logits 0 and ln(4), weights
        // 1/(1+4) and 4/(1+4).
        Value q = Value::from(TensorShape::mat(1, 1), std::array<real, 1>{1.0});
        Value k = Value::from(TensorShape::mat(2, 1), std::array<real, 2>{0.0, std::log(4.0)});
        Value v = Value::from(TensorShape::mat(2, 1), std::array<real, 2>{10.0, 20.0});
        Value out = attention(q, k, v);
        real expect = (1.0 / 5.0) * 10.0 + (4.0 / 5.0) * 20.0;
        CHECK(out.item() == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("empty key set is rejected") {
        Value q = Value::zeros(TensorShape::mat(1, 4));
        Value k = Value::zeros(TensorShape::mat(0, 4));
        Value v = Value::zeros(TensorShape::mat(0, 2));
        CHECK_THROWS(attention(q, k, v));
    }
    SUBCASE("output is invariant to joint key/value permutation") {
        Rng rng(7);
        Value q = randv(TensorShape::mat(4, 8), rng, -1, 1, false);
        Value k = randv(TensorShape::mat(16, 8), rng, -1, 1, false);
        Value v = randv(TensorShape::mat(16, 5), rng, -1, 1, false);
        std::vector<int> perm(16);
        for (int i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;
        Value kp = ops::gather_rows(k, perm);
        Value vp = ops::gather_rows(v, perm);
        Value a = attention(q, k, v);
        Value b = attention(q, kp, vp);
        for (size_t i = 0; i < a.data().size(); ++i)
            CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("backward of sum of squares is 2w") {
    Tape tape;
    TapeScope scope(tape);
    Rng rng(8);
    Value w = randv(TensorShape::vec(10), rng);
    Value loss = ops::sum_all(ops::square(w));
    tape.backward(loss);
    Value g = w.grad(tape);
    REQUIRE(g.defined());
    for (int i = 0; i < 10; ++i) CHECK(g.data()[i] == doctest::Approx(2 * w.data()[i]).epsilon(1e-12));
}

TEST_CASE("adam") {
    SUBCASE("first step moves the parameter by about -lr * sign(g)") {
        ParamStore store;
        Value w = store.create("w", TensorShape::vec(3));
        w.data_mut() = {0.5, -0.25, 1.0};
        std::vector<real> before = w.data();

        Tape tape;
        {
            TapeScope scope(tape);
            // loss = <c, w> with c = (2, -3, 0.5) gives exactly that gradient.
            Value c = Value::from(TensorShape::vec(3), std::array<real, 3>{2.0, -3.0, 0.5});
            Value loss = ops::sum_all(ops::mul(w, c));
            tape.backward(loss);
        }
        store.zero_grads();
        store.accumulate_grads(tape);
        store.adam_step(1e-2);
        // Hand-derived first Adam update: m_hat = g, v_hat = g^2, so the step
        // is -lr * g / (|g| + eps) = -lr * sign(g) up to eps.
        real g[3] = {2.0, -3.0, 0.5};
        for (int i = 0; i < 3; ++i) {
            real expect = before[i] - 1e-2 * g[i] / (std::abs(g[i]) + 1e-8);
            CHECK(w.data()[i] == doctest::Approx(expect).epsilon(1e-6));
        }
        CHECK(store.step() == 1);
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamStore store;
        Value w = store.create("w", TensorShape::vec(4));
        w.data_mut() = {1, 2, 3, 4};
        store.zero_grads();
        store.adam_step(1e-2);
        for (int i = 0; i < 4; ++i) CHECK(w.data()[i] == doctest::Approx((real)(i + 1)));
    }
    SUBCASE("non-finite gradients abort naming the parameter") {
        ParamStore store;
        Value w = store.create("offender", TensorShape::vec(2));
        Tape tape;
        {
            TapeScope scope(tape);
            Value bad = Value::from(TensorShape::vec(2), std::array<real, 2>{1e308, 1e308});
            Value loss = ops::sum_all(ops::mul(ops::mul(w, bad), bad));  // overflows to inf
            tape.backward(loss);
        }
        store.zero_grads();
        store.accumulate_grads(tape);
        CHECK_THROWS_WITH_AS(store.adam_step(1e-2),
                             doctest::Contains("offender"), std::runtime_error);
    }
}

TEST_CASE("grad_check tolerances from the contract") {
    Rng rng(9);
    SUBCASE("linear layer below 1e-5") {
        Value x = randv(TensorShape::mat(4, 6), rng);
        Value W = randv(TensorShape::mat(3, 6), rng);
        Value b = randv(TensorShape::vec(3), rng);
        Value inputs[] = {x, W, b};
        real err = grad_check([&]() { return ops::mean_all(linear(x, W, b)); }, inputs);
        CHECK(err < 1e-5);
    }
    SUBCASE("attention block below 1e-4") {
        Value q = randv(TensorShape::mat(3, 8), rng);
        Value k = randv(TensorShape::mat(6, 8), rng);
        Value v = randv(TensorShape::mat(6, 4), rng);
        Value inputs[] = {q, k, v};
        real err = grad_check([&]() { return ops::mean_all(attention(q, k, v)); }, inputs);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("every registered op passes its grad check") {
    for (const OpCheck& check : op_grad_checks(1234)) {
        INFO(check.name);
        real err = check.run();
        CHECK(err < check.threshold);
        CHECK(err < 1e-3);  // blanket bound from the module invariant
    }
}

TEST_CASE("second-order gradients: d/dtheta of |grad_x f| matches finite differences") {
    // f(x) = tanh(x W^T) summed; n = grad_x f. Perturbing W must change n in
    // the way the doubly-built tape predicts.
    Rng rng(10);
    Value W = randv(TensorShape::mat(1, 3), rng);
    Value xdata = randv(TensorShape::mat(4, 3), rng, -0.5, 0.5);

    auto eikonal_like = [&]() -> Value {
        Tape* t = Tape::active();
        Value x = Value::leaf(xdata.shape(), xdata.data());
        Value y = ops::tanh(ops::matmul_nt(x, W));
        Value wrt[] = {x};
        Value n = t->gradient(ops::sum_all(y), wrt, /*create_graph=*/true)[0];
        Value nn2 = ops::row_sums(ops::square(n));
        return ops::mean_all(ops::square(ops::add_const(ops::sqrt(nn2), -1.0)));
    };

    // Analytic gradient via the tape.
    Tape tape;
    std::vector<real> analytic;
    {
        TapeScope scope(tape);
        Value loss = eikonal_like();
        tape.backward(loss);
        analytic = W.grad(tape).data();
    }
    // FD oracle, each evaluation on a throwaway tape.
    real h = 1e-5;
    for (int c = 0; c < 3; ++c) {
        real saved = W.data()[c];
        auto eval = [&]() {
            Tape t2;
            TapeScope scope(t2);
            return eikonal_like().item();
        };
        W.data_mut()[c] = saved + h;
        real fp = eval();
        W.data_mut()[c] = saved - h;
        real fm = eval();
        W.data_mut()[c] = saved;
        real fd = (fp - fm) / (2 * h);
        CHECK(std::abs(fd - analytic[c]) / std::max(std::abs(fd), 1e-6) < 1e-4);
    }
}

TEST_CASE("checkpoint round trip is bit-exact and matches the declared layout") {
    fs::path dir = fs::temp_directory_path() / "s3f_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "test.ckpt").string();

    ParamStore store;
    Rng rng(11);
    Value a = store.create("layer.w", TensorShape::mat(3, 4));
    xavier_init(a, 4, 3, rng);
    Value b = store.create("layer.b", TensorShape::vec(3));
    xavier_init(b, 1, 3, rng);

    // Take one Adam step so moments are non-trivial (and f32-quantized).
    Tape tape;
    {
        TapeScope scope(tape);
        Value loss = ops::sum_all(ops::square(a));
        tape.backward(loss);
    }
    store.zero_grads();
    store.accumulate_grads(tape);
    store.adam_step(1e-3);

    store.save(path);
    std::vector<real> wa = a.data(), wb = b.data();

    ParamStore loaded;
    loaded.create("layer.w", TensorShape::mat(3, 4));
    loaded.create("layer.b", TensorShape::vec(3));
    loaded.load(path);
    // Bit-exact round trip.
    for (size_t i = 0; i < wa.size(); ++i) CHECK(loaded.get("layer.w").data()[i] == wa[i]);
    for (size_t i = 0; i < wb.size(); ++i) CHECK(loaded.get("layer.b").data()[i] == wb[i]);
    CHECK(loaded.step() == 1);

    // Re-saving produces an identical file.
    std::string path2 = (dir / "test2.ckpt").string();
    loaded.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    // Header layout: magic, then little-endian u32 tensor count (2 params * 3
    // tensors + step).
    REQUIRE(s1.size() > 12);
    CHECK(s1.substr(0, 8) == "S3FCKPT1");
    uint32_t count;
    std::memcpy(&count, s1.data() + 8, 4);
    CHECK(count == 7);

    // Shape mismatch and missing/unknown tensors are rejected.
    ParamStore wrong;
    wrong.create("layer.w", TensorShape::mat(4, 3));
    wrong.create("layer.b", TensorShape::vec(3));
    CHECK_THROWS(wrong.load(path));
    ParamStore extra;
    extra.create("layer.w", TensorShape::mat(3, 4));
    CHECK_THROWS(extra.load(path));

    fs::remove_all(dir);
}

TEST_CASE("forward evaluation is deterministic") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Value x = randv(TensorShape::mat(5, 7), rng, -1, 1, false);
        Value W = randv(TensorShape::mat(4, 7), rng, -1, 1, false);
        Value b = randv(TensorShape::vec(4), rng, -1, 1, false);
        return ops::swish(linear(x, W, b)).data();
    };
    auto a = run(77);
    auto b = run(77);
    CHECK(a == b);
}

TEST_CASE("finite check hook names the offending op") {
    set_finite_checks(true);
    Value x = Value::scalar(-1.0);
    CHECK_THROWS_WITH_AS(ops::log(x), doctest::Contains("log"), std::runtime_error);
    set_finite_checks(false);
}
