#include "s3f/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace s3f::nn {

using namespace ops;

Value ParamStore::create(const std::string& name, TensorShape shape) {
    if (slots_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    Slot slot;
    slot.value = Value::zeros(shape);
    slot.value.set_requires_grad(true);
    size_t n = (size_t)shape.numel();
    slot.m.assign(n, 0.0);
    slot.v.assign(n, 0.0);
    slot.grad.assign(n, 0.0);
    Value v = slot.value;
    slots_.emplace(name, std::move(slot));
    params_.emplace(name, v);
    return v;
}

Value ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, slot] : slots_) std::fill(slot.grad.begin(), slot.grad.end(), 0.0);
}

void ParamStore::accumulate_grads(const Tape& tape) {
    for (auto& [name, slot] : slots_) {
        Value g = slot.value.grad(tape);
        if (!g.defined()) continue;
        const auto& gd = g.data();
        for (size_t i = 0; i < gd.size(); ++i) slot.grad[i] += gd[i];
    }
}

std::span<const real> ParamStore::grad(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second.grad;
}

void ParamStore::adam_step(real lr, real beta1, real beta2, real eps) {
    ++step_;
    real bc1 = 1.0 - std::pow(beta1, (real)step_);
    real bc2 = 1.0 - std::pow(beta2, (real)step_);
    for (auto& [name, slot] : slots_) {
        auto& p = slot.value.data_mut();
        for (size_t i = 0; i < p.size(); ++i) {
            real g = slot.grad[i];
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient for parameter '" + name + "'");
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
            real mhat = slot.m[i] / bc1;
            real vhat = slot.v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            // f32 quantization keeps checkpoints bit-exact.
            p[i] = (real)(float)p[i];
            slot.m[i] = (real)(float)slot.m[i];
            slot.v[i] = (real)(float)slot.v[i];
        }
    }
}

void xavier_init(Value& v, int fan_in, int fan_out, Rng& rng) {
    real a = std::sqrt(6.0 / (real)(fan_in + fan_out));
    for (real& x : v.data_mut()) x = (real)(float)rng.uniform(-a, a);
}

Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
                   bool zero_init, real bias_fill) {
    Linear l;
    l.W = store.create(name + ".w", TensorShape::mat(out, in));
    l.b = store.create(name + ".b", TensorShape::vec(out));
    if (!zero_init) xavier_init(l.W, in, out, rng);
    if (bias_fill != 0.0)
        for (real& x : l.b.data_mut()) x = bias_fill;
    return l;
}

Value linear(const Value& x, const Value& W, const Value& b) {
    return add_rowvec(matmul_nt(x, W), b);
}

Value activation(const Value& x, Act kind) {
    switch (kind) {
        case Act::relu: return relu(x);
        case Act::leaky_relu: return leaky_relu(x);
        case Act::swish: return swish(x);
        case Act::sigmoid: return sigmoid(x);
    }
    throw std::logic_error("bad activation");
}

Value positional_encoding(const Value& x, int freqs) {
    if (x.shape().rank != 2) throw std::invalid_argument("positional_encoding needs (N,D)");
    Value out = x;
    for (int j = 0; j < freqs; ++j) {
        Value scaled = scale(x, std::ldexp(M_PI, j));  // 2^j * pi * x
        out = concat_cols(out, concat_cols(sin(scaled), cos(scaled)));
    }
    return out;
}

Value attention(const Value& queries, const Value& keys, const Value& values) {
    if (queries.shape().rank != 2 || keys.shape().rank != 2 || values.shape().rank != 2)
        throw std::invalid_argument("attention needs rank-2 inputs");
    int d = queries.shape().dims[1];
    if (keys.shape().dims[1] != d) throw std::invalid_argument("attention key width mismatch");
    if (keys.shape().dims[0] != values.shape().dims[0])
        throw std::invalid_argument("attention key/value count mismatch");
    if (keys.shape().dims[0] == 0) throw std::invalid_argument("attention over zero keys");
    Value scores = scale(matmul_nt(queries, keys), 1.0 / std::sqrt((real)d));
    return matmul(softmax_rows(scores), values);
}

real grad_check(const std::function<Value()>& f, std::span<Value> inputs, real h, int max_coords,
                uint64_t seed) {
    // Analytic gradients from one recorded evaluation.
    Tape tape;
    std::vector<std::vector<real>> analytic;
    {
        TapeScope scope(tape);
        Value loss = f();
        if (loss.numel() != 1) throw std::invalid_argument("grad_check needs a scalar function");
        tape.backward(loss);
        for (Value& in : inputs) {
            Value g = in.grad(tape);
            analytic.push_back(g.defined() ? g.data() : std::vector<real>(in.numel(), 0.0));
        }
    }

    Rng rng(seed);
    real worst = 0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Value& in = inputs[k];
        int64_t n = in.numel();
        std::vector<int64_t> coords;
        if (max_coords < 0 || n <= max_coords) {
            coords.resize((size_t)n);
            for (int64_t i = 0; i < n; ++i) coords[(size_t)i] = i;
        } else {
            for (int i = 0; i < max_coords; ++i) coords.push_back((int64_t)rng.index((uint64_t)n));
        }
        for (int64_t c : coords) {
            real saved = in.data()[(size_t)c];
            in.data_mut()[(size_t)c] = saved + h;
            real fp = f().item();
            in.data_mut()[(size_t)c] = saved - h;
            real fm = f().item();
            in.data_mut()[(size_t)c] = saved;
            real fd = (fp - fm) / (2.0 * h);
            real rel = std::abs(fd - analytic[k][(size_t)c]) / std::max(std::abs(fd), (real)1e-6);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

namespace {

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}

constexpr char kMagic[8] = {'S', '3', 'F', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kMagic, 8);
    write_raw<uint32_t>(os, (uint32_t)tensors.size());
    for (const NamedTensor& t : tensors) {
        write_raw<uint32_t>(os, (uint32_t)t.name.size());
        os.write(t.name.data(), (std::streamsize)t.name.size());
        write_raw<uint32_t>(os, (uint32_t)t.shape.rank);
        for (int i = 0; i < t.shape.rank; ++i) write_raw<uint32_t>(os, (uint32_t)t.shape.dims[i]);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 (std::streamsize)(t.data.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failure on " + path);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path + " is not an S3F checkpoint");
    uint32_t count = read_raw<uint32_t>(is);
    std::vector<NamedTensor> out(count);
    for (NamedTensor& t : out) {
        uint32_t len = read_raw<uint32_t>(is);
        t.name.resize(len);
        is.read(t.name.data(), len);
        uint32_t rank = read_raw<uint32_t>(is);
        if (rank > 3) throw std::runtime_error("checkpoint tensor rank > 3");
        t.shape.rank = (int)rank;
        for (uint32_t i = 0; i < rank; ++i) t.shape.dims[i] = (int)read_raw<uint32_t>(is);
        t.data.resize((size_t)t.shape.numel());
        is.read(reinterpret_cast<char*>(t.data.data()),
                (std::streamsize)(t.data.size() * sizeof(float)));
        if (!is) throw std::runtime_error("truncated checkpoint " + path);
    }
    return out;
}

void ParamStore::save(const std::string& path) const {
    std::vector<NamedTensor> tensors;
    for (const auto& [name, slot] : slots_) {
        NamedTensor t;
        t.name = name;
        t.shape = slot.value.shape();
        t.data.assign(slot.value.data().begin(), slot.value.data().end());
        tensors.push_back(std::move(t));
        NamedTensor m{name + ".m", slot.value.shape(), {slot.m.begin(), slot.m.end()}};
        NamedTensor v{name + ".v", slot.value.shape(), {slot.v.begin(), slot.v.end()}};
        tensors.push_back(std::move(m));
        tensors.push_back(std::move(v));
    }
    NamedTensor st{"step", TensorShape::scalar(), {(float)step_}};
    tensors.push_back(std::move(st));
    write_checkpoint(path, tensors);
}

void ParamStore::load(const std::string& path) {
    std::vector<NamedTensor> tensors = read_checkpoint(path);
    std::map<std::string, NamedTensor*> by_name;
    for (NamedTensor& t : tensors) by_name[t.name] = &t;

    auto take = [&](const std::string& name, TensorShape expect) -> NamedTensor* {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint missing tensor '" + name + "'");
        if (!(it->second->shape == expect))
            throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                                     it->second->shape.str() + ", expected " + expect.str());
        NamedTensor* t = it->second;
        by_name.erase(it);
        return t;
    };

    for (auto& [name, slot] : slots_) {
        NamedTensor* p = take(name, slot.value.shape());
        auto& dst = slot.value.data_mut();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = (real)p->data[i];
        NamedTensor* m = take(name + ".m", slot.value.shape());
        NamedTensor* v = take(name + ".v", slot.value.shape());
        for (size_t i = 0; i < slot.m.size(); ++i) {
            slot.m[i] = (real)m->data[i];
            slot.v[i] = (real)v->data[i];
        }
    }
    NamedTensor* st = take("step", TensorShape::scalar());
    step_ = (int64_t)st->data[0];
    if (!by_name.empty())
        throw std::runtime_error("checkpoint has unexpected tensor '" + by_name.begin()->first +
                                 "'");
}

}  // namespace s3f::nn
