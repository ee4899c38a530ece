#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace s3f::nn {

// All tape computation runs in double precision; parameters are quantized to
// f32 on every optimizer update so checkpoints (stored as f32) round-trip
// bit-exactly.
using real = double;

struct TensorShape {
    int rank = 0;
    std::array<int, 3> dims{1, 1, 1};

    TensorShape() = default;
    TensorShape(std::initializer_list<int> d) {
        rank = (int)d.size();
        int i = 0;
        for (int v : d) dims[i++] = v;
    }
    static TensorShape scalar() { return TensorShape{}; }
    static TensorShape vec(int n) { return TensorShape{n}; }
    static TensorShape mat(int r, int c) { return TensorShape{r, c}; }

    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < rank; ++i) n *= dims[i];
        return n;
    }
    bool operator==(const TensorShape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (dims[i] != o.dims[i]) return false;
        return true;
    }
    std::string str() const;
};

class Value;
class Tape;

namespace detail {

struct Node {
    TensorShape shape;
    std::vector<real> data;
    bool requires_grad = false;
    int entry = -1;                 // producing tape entry, -1 for leaves
    // Per-sweep adjoint slot, validated by epoch counters.
    std::shared_ptr<Node> adj;
    uint64_t adj_epoch = 0;
    uint64_t cone_epoch = 0;
};

}  // namespace detail

// A tensor value (rank <= 3) with reverse-mode gradient support. Copies are
// shallow; the underlying buffer is shared.
class Value {
  public:
    Value() = default;

    static Value zeros(TensorShape s);
    static Value full(TensorShape s, real v);
    static Value from(TensorShape s, std::span<const real> data);
    static Value scalar(real v);
    // Leaf that participates in differentiation (parameters, query points).
    static Value leaf(TensorShape s, std::span<const real> data, bool requires_grad = true);

    bool defined() const { return (bool)n_; }
    const TensorShape& shape() const { return n_->shape; }
    int64_t numel() const { return n_->shape.numel(); }
    const std::vector<real>& data() const { return n_->data; }
    std::vector<real>& data_mut() { return n_->data; }
    real item() const;

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    // Adjoint from the most recent sweep of `tape`; undefined Value if none.
    Value grad(const Tape& tape) const;

    detail::Node* node() const { return n_.get(); }
    const std::shared_ptr<detail::Node>& shared_node() const { return n_; }

  private:
    friend class Tape;
    friend class GradSink;
    explicit Value(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;
};

// Receives adjoint contributions during a sweep. Backward functions must test
// wants() before doing work for an input.
class GradSink {
  public:
    bool wants(const Value& v) const;
    void add(const Value& v, const Value& delta);
    // True while sweeping with create_graph; ops whose backward is not
    // differentiable must refuse to run in that mode.
    bool create_graph() const { return create_graph_; }

  private:
    friend class Tape;
    GradSink(Tape& t, bool cone_only, bool create_graph)
        : tape_(t), cone_only_(cone_only), create_graph_(create_graph) {}
    Tape& tape_;
    bool cone_only_;
    bool create_graph_;
};

using BackwardFn = std::function<void(const Value& upstream, GradSink& sink)>;

// Records the operation graph of one training step. Backward functions are
// compositions of tape primitives, so sweeping with `create_graph` yields a
// differentiable gradient (used for normals and the Eikonal term).
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Innermost active tape on this thread, or nullptr.
    static Tape* active();
    static bool recording();

    // Full reverse sweep from a scalar (or any) output; adjoints are seeded
    // with ones. Does not record.
    void backward(const Value& root);

    // d(sum(out)) / d(wrt), restricted to the dependency cone of `wrt`.
    // Records the sweep when create_graph is true, enabling second-order
    // differentiation through the returned values.
    std::vector<Value> gradient(const Value& out, std::span<const Value> wrt, bool create_graph);

    void reset();
    size_t size() const { return entries_.size(); }
    uint64_t epoch() const { return epoch_; }

  private:
    friend class GradSink;
    friend struct TapeScope;
    friend struct RecordPause;
    friend void record_entry(std::vector<Value>, const Value&, BackwardFn);

    struct Entry {
        std::vector<Value> inputs;
        Value out;
        BackwardFn back;
    };

    void sweep(const Value& root, int start_entry, bool cone_only, bool create_graph);

    std::vector<Entry> entries_;
    uint64_t epoch_ = 0;
    uint64_t cone_mark_ = 0;
    bool paused_ = false;
};

// RAII activation of a tape on this thread.
struct TapeScope {
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
};

// Temporarily disables recording on the active tape (used by the backward
// driver itself, and by oracle re-evaluations in grad checks).
struct RecordPause {
    RecordPause();
    ~RecordPause();
    RecordPause(const RecordPause&) = delete;

  private:
    Tape* t_;
    bool prev_;
};

// Appends an entry to the active tape if recording and any input requires
// grad. Called by every differentiable primitive.
void record_entry(std::vector<Value> inputs, const Value& out, BackwardFn back);

// When enabled, every primitive verifies its output is finite and throws
// naming the op otherwise.
void set_finite_checks(bool enabled);
bool finite_checks();

}  // namespace s3f::nn
