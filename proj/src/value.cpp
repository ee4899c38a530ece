#include "s3f/value.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "s3f/ops.hpp"

namespace s3f::nn {

namespace {
thread_local std::vector<Tape*> t_tape_stack;
bool g_finite_checks = false;
// Adjoint slots live on shared nodes, so sweep/cone identifiers must be
// unique across all tape instances.
std::atomic<uint64_t> g_epoch{1};
std::atomic<uint64_t> g_cone_mark{1};
}  // namespace

std::string TensorShape::str() const {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < rank; ++i) os << dims[i] << (i + 1 < rank ? "," : "");
    os << ")";
    return os.str();
}

Value Value::zeros(TensorShape s) {
    auto n = std::make_shared<detail::Node>();
    n->shape = s;
    n->data.assign((size_t)s.numel(), 0.0);
    return Value(std::move(n));
}

Value Value::full(TensorShape s, real v) {
    Value out = zeros(s);
    for (real& x : out.data_mut()) x = v;
    return out;
}

Value Value::from(TensorShape s, std::span<const real> data) {
    if ((int64_t)data.size() != s.numel()) throw std::invalid_argument("Value::from size mismatch");
    Value out = zeros(s);
    std::copy(data.begin(), data.end(), out.data_mut().begin());
    return out;
}

Value Value::scalar(real v) { return full(TensorShape::scalar(), v); }

Value Value::leaf(TensorShape s, std::span<const real> data, bool requires_grad) {
    Value out = from(s, data);
    out.set_requires_grad(requires_grad);
    return out;
}

real Value::item() const {
    if (numel() != 1) throw std::logic_error("item() on non-scalar value " + shape().str());
    return n_->data[0];
}

Value Value::grad(const Tape& tape) const {
    if (n_->adj_epoch == tape.epoch() && n_->adj) return Value(n_->adj);
    return Value();
}

Tape* Tape::active() { return t_tape_stack.empty() ? nullptr : t_tape_stack.back(); }

bool Tape::recording() {
    Tape* t = active();
    return t && !t->paused_;
}

TapeScope::TapeScope(Tape& t) { t_tape_stack.push_back(&t); }
TapeScope::~TapeScope() { t_tape_stack.pop_back(); }

RecordPause::RecordPause() : t_(Tape::active()), prev_(t_ ? t_->paused_ : false) {
    if (t_) t_->paused_ = true;
}
RecordPause::~RecordPause() {
    if (t_) t_->paused_ = prev_;
}

void record_entry(std::vector<Value> inputs, const Value& out, BackwardFn back) {
    Tape* t = Tape::active();
    if (!t || t->paused_) return;
    bool any = false;
    for (const Value& v : inputs)
        if (v.defined() && v.requires_grad()) any = true;
    if (!any) return;
    out.node()->requires_grad = true;
    out.node()->entry = (int)t->entries_.size();
    t->entries_.push_back({std::move(inputs), out, std::move(back)});
}

bool GradSink::wants(const Value& v) const {
    if (!v.defined() || !v.requires_grad()) return false;
    if (cone_only_) return v.node()->cone_epoch == tape_.cone_mark_;
    return true;
}

void GradSink::add(const Value& v, const Value& delta) {
    if (!wants(v)) return;
    detail::Node* n = v.node();
    if (!(delta.shape() == n->shape))
        throw std::logic_error("adjoint shape mismatch: " + delta.shape().str() + " vs " +
                               n->shape.str());
    if (n->adj_epoch == tape_.epoch_ && n->adj) {
        Value sum = ops::add(Value(n->adj), delta);
        n->adj = sum.shared_node();
    } else {
        n->adj = delta.shared_node();
        n->adj_epoch = tape_.epoch_;
    }
}

void Tape::sweep(const Value& root, int start_entry, bool cone_only, bool create_graph) {
    epoch_ = ++g_epoch;
    // Seed with ones.
    Value seed = Value::full(root.shape(), 1.0);
    root.node()->adj = seed.shared_node();
    root.node()->adj_epoch = epoch_;

    GradSink sink(*this, cone_only, create_graph);
    bool pause_prev = paused_;
    paused_ = !create_graph;
    for (int i = start_entry; i >= 0; --i) {
        Entry& e = entries_[(size_t)i];
        detail::Node* out = e.out.node();
        if (out->adj_epoch != epoch_ || !out->adj) continue;
        if (cone_only && out->cone_epoch != cone_mark_) continue;
        Value g(out->adj);
        e.back(g, sink);
    }
    paused_ = pause_prev;
}

void Tape::backward(const Value& root) {
    if (!root.defined()) throw std::logic_error("backward on undefined value");
    sweep(root, root.node()->entry, /*cone_only=*/false, /*create_graph=*/false);
}

std::vector<Value> Tape::gradient(const Value& out, std::span<const Value> wrt,
                                  bool create_graph) {
    if (!out.defined()) throw std::logic_error("gradient of undefined value");
    // Mark the dependency cone of wrt up to out's entry.
    cone_mark_ = ++g_cone_mark;
    for (const Value& w : wrt) w.node()->cone_epoch = cone_mark_;
    int end = out.node()->entry;
    for (int i = 0; i <= end; ++i) {
        Entry& e = entries_[(size_t)i];
        bool in_cone = false;
        for (const Value& v : e.inputs)
            if (v.defined() && v.node()->cone_epoch == cone_mark_) in_cone = true;
        if (in_cone) e.out.node()->cone_epoch = cone_mark_;
    }

    std::vector<Value> grads(wrt.size());
    bool connected = out.node()->cone_epoch == cone_mark_;
    for (size_t i = 0; i < wrt.size(); ++i)
        if (wrt[i].node() == out.node()) connected = true;

    if (connected) sweep(out, end, /*cone_only=*/true, create_graph);

    for (size_t i = 0; i < wrt.size(); ++i) {
        Value g = wrt[i].grad(*this);
        grads[i] = g.defined() ? g : Value::zeros(wrt[i].shape());
    }
    return grads;
}

void Tape::reset() {
    entries_.clear();
    epoch_ = ++g_epoch;
    cone_mark_ = ++g_cone_mark;
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

}  // namespace s3f::nn
