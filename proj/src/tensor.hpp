#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "errors.hpp"

namespace vizecg {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense f64 array plus an optional gradient buffer of the same length.
// Tensors are shared between the graph nodes that produced/consume them.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // empty until backward touches this tensor

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    // 2-D accessors (row-major).
    double& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(data.size(), 0.0);
    }
    bool has_grad() const { return !grad.empty(); }

    static std::shared_ptr<Tensor> create(Shape shape, bool requires_grad = false);
    static std::shared_ptr<Tensor> create(Shape shape, std::vector<double> values,
                                          bool requires_grad = false);
    static std::shared_ptr<Tensor> scalar(double value, bool requires_grad = false);

    // Deep copy of shape/data/requires_grad; gradient buffer starts empty.
    std::shared_ptr<Tensor> clone() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

// Reverse-mode tape. Operations record their adjoint closures in execution
// order; backward() replays them in exact reverse order. One Graph per
// forward pass; not thread-safe for concurrent mutation.
class Graph {
public:
    // recording=false turns the graph into a pure evaluator (no tape, no
    // requires_grad propagation) for inference passes.
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t node_count() const { return tape_.size(); }

    // Validate op outputs for NaN/Inf (used by tests; off by default).
    void set_check_finite(bool on) { check_finite_ = on; }

    TensorPtr constant(Shape shape, std::vector<double> values);
    TensorPtr full(Shape shape, double value);

    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr softmax_rows(const TensorPtr& x);
    TensorPtr conv1d(const TensorPtr& x, const TensorPtr& w, int stride, int padding);
    TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, int stride, int padding);
    TensorPtr relu(const TensorPtr& x);
    TensorPtr sigmoid(const TensorPtr& x);
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr scale(const TensorPtr& x, double factor);
    TensorPtr log(const TensorPtr& x);
    // Element clamp with pass-through gradient strictly inside (lo, hi).
    TensorPtr clamp(const TensorPtr& x, double lo, double hi);
    TensorPtr mean_over_axis(const TensorPtr& x, int axis);
    TensorPtr transpose2d(const TensorPtr& x);
    TensorPtr reshape(const TensorPtr& x, Shape shape);
    // Per-channel standardization over the channel's extent, then learned
    // gain/bias. x: [C x N], gain/bias: [C].
    TensorPtr channel_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                           double eps = 1e-5);
    // x: [C x L] -> [C], per-channel mean.
    TensorPtr global_avg_pool(const TensorPtr& x);
    // Adaptive mean pooling over columns: [C x N] -> [C x out_cols].
    TensorPtr avg_pool_cols(const TensorPtr& x, int out_cols);
    TensorPtr sum_all(const TensorPtr& x);

    // Copy of x that does not propagate gradient (grad cut).
    TensorPtr detach(const TensorPtr& x);

    // Seeds d(loss)/d(loss)=1 and replays the tape in reverse, accumulating
    // gradients additively. Errors: non-scalar loss, detached loss, or a
    // second backward without new recorded work.
    void backward(const TensorPtr& loss);

private:
    TensorPtr make_output(Shape shape, bool requires_grad);
    void record(std::function<void()> adjoint);
    void finish(const TensorPtr& out, const char* op_name);

    std::vector<std::function<void()>> tape_;
    bool recording_ = true;
    bool backward_run_ = false;
    bool check_finite_ = false;
};

} // namespace vizecg
