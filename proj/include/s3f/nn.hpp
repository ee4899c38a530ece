#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>

#include "s3f/ops.hpp"
#include "s3f/rng.hpp"
#include "s3f/value.hpp"

namespace s3f::nn {

// Named trainable parameters with Adam moments. Parameter data (and moments)
// are quantized to f32 after every update, which makes the f32 checkpoint
// format lossless.
class ParamStore {
  public:
    Value create(const std::string& name, TensorShape shape);
    Value get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    const std::map<std::string, Value>& params() const { return params_; }

    void zero_grads();
    // Adds the adjoints of the most recent sweep of `tape` into the gradient
    // accumulators (called once per loss branch).
    void accumulate_grads(const Tape& tape);
    std::span<const real> grad(const std::string& name) const;

    // One Adam update from the accumulated gradients; increments the step
    // counter and re-quantizes parameters. Throws (naming the parameter) on a
    // non-finite gradient.
    void adam_step(real lr, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8);
    int64_t step() const { return step_; }

    void save(const std::string& path) const;
    void load(const std::string& path);

  private:
    struct Slot {
        Value value;
        std::vector<real> m, v, grad;
    };
    std::map<std::string, Slot> slots_;
    std::map<std::string, Value> params_;  // mirrors slots_, stable iteration
    int64_t step_ = 0;
};

void xavier_init(Value& v, int fan_in, int fan_out, Rng& rng);

struct Linear {
    Value W;  // (out, in)
    Value b;  // (out)

    // y = x W^T + b for row-major batches.
    Value operator()(const Value& x) const { return ops::add_rowvec(ops::matmul_nt(x, W), b); }
    int in_dim() const { return W.shape().dims[1]; }
    int out_dim() const { return W.shape().dims[0]; }
};

Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
                   bool zero_init = false, real bias_fill = 0.0);

Value linear(const Value& x, const Value& W, const Value& b);

enum class Act { relu, leaky_relu, swish, sigmoid };
Value activation(const Value& x, Act kind);

// [x, sin(2^j pi x), cos(2^j pi x)] for j = 0..freqs-1, per coordinate.
// (N,D) -> (N, D * (1 + 2*freqs)).
Value positional_encoding(const Value& x, int freqs = 6);

// Single-head scaled dot-product attention; queries (Q,d), keys (N,d),
// values (N,k) -> (Q,k).
Value attention(const Value& queries, const Value& keys, const Value& values);

// Central-difference gradient check. Evaluates `f` (a scalar-valued closure
// over `inputs`) on a fresh tape, then compares tape gradients against
// (f(x+h)-f(x-h))/2h per coordinate. When an input has more coordinates than
// `max_coords`, a seeded subset is probed. Returns the max relative error
// with the denominator floored at 1e-6.
real grad_check(const std::function<Value()>& f, std::span<Value> inputs, real h = 1e-4,
                int max_coords = -1, uint64_t seed = 12345);

// Checkpoint container: magic "S3FCKPT1", little-endian u32 tensor count,
// then per tensor u32 name length, name bytes, u32 rank, u32 dims[rank], raw
// f32 data. Used for parameters ("<name>"), Adam moments ("<name>.m"/".v")
// and the scalar "step".
struct NamedTensor {
    std::string name;
    TensorShape shape;
    std::vector<float> data;
};
void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

// One grad-check per registered differentiable primitive (and the composed
// layers), on seeded random inputs. Drives the `gradcheck` command and the
// gradient acceptance gate.
struct OpCheck {
    std::string name;
    real threshold;
    std::function<real()> run;  // returns max relative error
};
std::vector<OpCheck> op_grad_checks(uint64_t seed);

}  // namespace s3f::nn
