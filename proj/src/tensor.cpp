#include "tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vizecg {

namespace {

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

int conv_out_len(int in_len, int kernel, int stride, int padding) {
    return (in_len + 2 * padding - kernel) / stride + 1;
}

// Stable logistic for large |x|.
double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

TensorPtr Tensor::create(Shape shape, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::create(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return create({1}, {value}, requires_grad);
}

TensorPtr Tensor::clone() const {
    auto t = std::make_shared<Tensor>();
    t->shape = shape;
    t->data = data;
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Graph::make_output(Shape shape, bool requires_grad) {
    return Tensor::create(std::move(shape), recording_ && requires_grad);
}

void Graph::record(std::function<void()> adjoint) {
    tape_.push_back(std::move(adjoint));
    backward_run_ = false; // new forward work re-arms backward
}

void Graph::finish(const TensorPtr& out, const char* op_name) {
    if (check_finite_ && !all_finite(out->data)) {
        throw NumericError(std::string(op_name) + ": non-finite value in output");
    }
}

TensorPtr Graph::constant(Shape shape, std::vector<double> values) {
    return Tensor::create(std::move(shape), std::move(values), false);
}

TensorPtr Graph::full(Shape shape, double value) {
    auto t = Tensor::create(std::move(shape), false);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->dim(1) != b->dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                             shape_str(b->shape));
    }
    const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
    auto out = make_output({m, n}, a->requires_grad || b->requires_grad);

    ConstMatMap am(a->data.data(), m, k), bm(b->data.data(), k, n);
    MatMap(out->data.data(), m, n).noalias() = am * bm;
    finish(out, "matmul");

    if (out->requires_grad) {
        record([a, b, out, m, k, n] {
            if (out->grad.empty()) return;
            ConstMatMap dy(out->grad.data(), m, n);
            if (a->requires_grad) {
                a->ensure_grad();
                ConstMatMap bm(b->data.data(), k, n);
                MatMap(a->grad.data(), m, k).noalias() += dy * bm.transpose();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                ConstMatMap am(a->data.data(), m, k);
                MatMap(b->grad.data(), k, n).noalias() += am.transpose() * dy;
            }
        });
    }
    return out;
}

TensorPtr Graph::softmax_rows(const TensorPtr& x) {
    if (x->ndim() != 2) {
        throw DimensionError("softmax_rows: expected 2-D input, got " + shape_str(x->shape));
    }
    const int m = x->dim(0), n = x->dim(1);
    auto out = make_output(x->shape, x->requires_grad);
    for (int r = 0; r < m; ++r) {
        const double* row = &x->data[static_cast<size_t>(r) * n];
        double* dst = &out->data[static_cast<size_t>(r) * n];
        double mx = row[0];
        for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < n; ++c) {
            dst[c] = std::exp(row[c] - mx);
            sum += dst[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < n; ++c) dst[c] *= inv;
    }
    finish(out, "softmax_rows");

    if (out->requires_grad) {
        record([x, out, m, n] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* s = &out->data[static_cast<size_t>(r) * n];
                const double* dy = &out->grad[static_cast<size_t>(r) * n];
                double* dx = &x->grad[static_cast<size_t>(r) * n];
                double dot = 0.0;
                for (int c = 0; c < n; ++c) dot += dy[c] * s[c];
                for (int c = 0; c < n; ++c) dx[c] += s[c] * (dy[c] - dot);
            }
        });
    }
    return out;
}

// conv1d/conv2d use im2col so the bulk of the work lands in one GEMM.
// Cross-correlation convention, zero padding.
TensorPtr Graph::conv1d(const TensorPtr& x, const TensorPtr& w, int stride, int padding) {
    if (x->ndim() != 2 || w->ndim() != 3) {
        throw DimensionError("conv1d: expected x [Cin x T], w [Cout x Cin x k], got " +
                             shape_str(x->shape) + " and " + shape_str(w->shape));
    }
    if (w->dim(1) != x->dim(0)) {
        throw DimensionError("conv1d: input channels " + std::to_string(x->dim(0)) +
                             " do not match kernel channels " + std::to_string(w->dim(1)));
    }
    if (stride < 1) throw DimensionError("conv1d: stride must be >= 1");
    if (padding < 0) throw DimensionError("conv1d: padding must be >= 0");
    const int c_in = x->dim(0), t_in = x->dim(1);
    const int c_out = w->dim(0), k = w->dim(2);
    if (k > t_in + 2 * padding) {
        throw DimensionError("conv1d: kernel length " + std::to_string(k) +
                             " exceeds padded input length " + std::to_string(t_in + 2 * padding));
    }
    const int t_out = conv_out_len(t_in, k, stride, padding);
    auto out = make_output({c_out, t_out}, x->requires_grad || w->requires_grad);

    // cols: [Cin*k x T'], column t' holds the receptive field of output t'.
    std::vector<double> cols(static_cast<size_t>(c_in) * k * t_out, 0.0);
    for (int ci = 0; ci < c_in; ++ci) {
        const double* src = &x->data[static_cast<size_t>(ci) * t_in];
        for (int kk = 0; kk < k; ++kk) {
            double* dst = &cols[(static_cast<size_t>(ci) * k + kk) * t_out];
            for (int to = 0; to < t_out; ++to) {
                const int ti = to * stride - padding + kk;
                dst[to] = (ti >= 0 && ti < t_in) ? src[ti] : 0.0;
            }
        }
    }
    {
        ConstMatMap wm(w->data.data(), c_out, c_in * k);
        ConstMatMap cm(cols.data(), c_in * k, t_out);
        MatMap(out->data.data(), c_out, t_out).noalias() = wm * cm;
    }
    finish(out, "conv1d");

    if (out->requires_grad) {
        record([x, w, out, cols = std::move(cols), stride, padding, c_in, t_in, c_out, k, t_out] {
            if (out->grad.empty()) return;
            ConstMatMap dy(out->grad.data(), c_out, t_out);
            if (w->requires_grad) {
                w->ensure_grad();
                ConstMatMap cm(cols.data(), c_in * k, t_out);
                MatMap(w->grad.data(), c_out, c_in * k).noalias() += dy * cm.transpose();
            }
            if (x->requires_grad) {
                x->ensure_grad();
                std::vector<double> dcols(static_cast<size_t>(c_in) * k * t_out);
                ConstMatMap wm(w->data.data(), c_out, c_in * k);
                MatMap(dcols.data(), c_in * k, t_out).noalias() = wm.transpose() * dy;
                for (int ci = 0; ci < c_in; ++ci) {
                    double* dst = &x->grad[static_cast<size_t>(ci) * t_in];
                    for (int kk = 0; kk < k; ++kk) {
                        const double* src = &dcols[(static_cast<size_t>(ci) * k + kk) * t_out];
                        for (int to = 0; to < t_out; ++to) {
                            const int ti = to * stride - padding + kk;
                            if (ti >= 0 && ti < t_in) dst[ti] += src[to];
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr Graph::conv2d(const TensorPtr& x, const TensorPtr& w, int stride, int padding) {
    if (x->ndim() != 3 || w->ndim() != 4) {
        throw DimensionError("conv2d: expected x [Cin x H x W], w [Cout x Cin x k x k], got " +
                             shape_str(x->shape) + " and " + shape_str(w->shape));
    }
    if (w->dim(2) != w->dim(3)) {
        throw DimensionError("conv2d: only square kernels are supported, got " + shape_str(w->shape));
    }
    if (w->dim(1) != x->dim(0)) {
        throw DimensionError("conv2d: input channels " + std::to_string(x->dim(0)) +
                             " do not match kernel channels " + std::to_string(w->dim(1)));
    }
    if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
    if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
    const int c_in = x->dim(0), h_in = x->dim(1), w_in = x->dim(2);
    const int c_out = w->dim(0), k = w->dim(2);
    if (k > h_in + 2 * padding || k > w_in + 2 * padding) {
        throw DimensionError("conv2d: kernel " + std::to_string(k) + "x" + std::to_string(k) +
                             " exceeds padded input " + std::to_string(h_in + 2 * padding) + "x" +
                             std::to_string(w_in + 2 * padding));
    }
    const int h_out = conv_out_len(h_in, k, stride, padding);
    const int w_out = conv_out_len(w_in, k, stride, padding);
    const int positions = h_out * w_out;
    auto out = make_output({c_out, h_out, w_out}, x->requires_grad || w->requires_grad);

    const int patch = c_in * k * k;
    std::vector<double> cols(static_cast<size_t>(patch) * positions, 0.0);
    for (int ci = 0; ci < c_in; ++ci) {
        const double* plane = &x->data[static_cast<size_t>(ci) * h_in * w_in];
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                double* dst = &cols[((static_cast<size_t>(ci) * k + kr) * k + kc) * positions];
                for (int ho = 0; ho < h_out; ++ho) {
                    const int hi = ho * stride - padding + kr;
                    double* drow = dst + static_cast<size_t>(ho) * w_out;
                    if (hi < 0 || hi >= h_in) continue; // stays zero
                    const double* srow = plane + static_cast<size_t>(hi) * w_in;
                    for (int wo = 0; wo < w_out; ++wo) {
                        const int wi = wo * stride - padding + kc;
                        if (wi >= 0 && wi < w_in) drow[wo] = srow[wi];
                    }
                }
            }
        }
    }
    {
        ConstMatMap wm(w->data.data(), c_out, patch);
        ConstMatMap cm(cols.data(), patch, positions);
        MatMap(out->data.data(), c_out, positions).noalias() = wm * cm;
    }
    finish(out, "conv2d");

    if (out->requires_grad) {
        record([x, w, out, cols = std::move(cols), stride, padding, c_in, h_in, w_in, c_out, k,
                h_out, w_out, positions, patch] {
            if (out->grad.empty()) return;
            ConstMatMap dy(out->grad.data(), c_out, positions);
            if (w->requires_grad) {
                w->ensure_grad();
                ConstMatMap cm(cols.data(), patch, positions);
                MatMap(w->grad.data(), c_out, patch).noalias() += dy * cm.transpose();
            }
            if (x->requires_grad) {
                x->ensure_grad();
                std::vector<double> dcols(static_cast<size_t>(patch) * positions);
                ConstMatMap wm(w->data.data(), c_out, patch);
                MatMap(dcols.data(), patch, positions).noalias() = wm.transpose() * dy;
                for (int ci = 0; ci < c_in; ++ci) {
                    double* dplane = &x->grad[static_cast<size_t>(ci) * h_in * w_in];
                    for (int kr = 0; kr < k; ++kr) {
                        for (int kc = 0; kc < k; ++kc) {
                            const double* src =
                                &dcols[((static_cast<size_t>(ci) * k + kr) * k + kc) * positions];
                            for (int ho = 0; ho < h_out; ++ho) {
                                const int hi = ho * stride - padding + kr;
                                if (hi < 0 || hi >= h_in) continue;
                                double* drow = dplane + static_cast<size_t>(hi) * w_in;
                                const double* srow = src + static_cast<size_t>(ho) * w_out;
                                for (int wo = 0; wo < w_out; ++wo) {
                                    const int wi = wo * stride - padding + kc;
                                    if (wi >= 0 && wi < w_in) drow[wi] += srow[wo];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr Graph::relu(const TensorPtr& x) {
    auto out = make_output(x->shape, x->requires_grad);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    finish(out, "relu");
    if (out->requires_grad) {
        record([x, out] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            // subgradient at 0 is 0
            for (size_t i = 0; i < x->data.size(); ++i) {
                if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr Graph::sigmoid(const TensorPtr& x) {
    auto out = make_output(x->shape, x->requires_grad);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = stable_sigmoid(x->data[i]);
    finish(out, "sigmoid");
    if (out->requires_grad) {
        record([x, out] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < out->data.size(); ++i) {
                const double s = out->data[i];
                x->grad[i] += out->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw DimensionError("add: shape mismatch " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    }
    auto out = make_output(a->shape, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    finish(out, "add");
    if (out->requires_grad) {
        record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw DimensionError("mul: shape mismatch " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    }
    auto out = make_output(a->shape, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    finish(out, "mul");
    if (out->requires_grad) {
        record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

TensorPtr Graph::scale(const TensorPtr& x, double factor) {
    auto out = make_output(x->shape, x->requires_grad);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * factor;
    finish(out, "scale");
    if (out->requires_grad) {
        record([x, out, factor] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i] * factor;
        });
    }
    return out;
}

TensorPtr Graph::log(const TensorPtr& x) {
    auto out = make_output(x->shape, x->requires_grad);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = std::log(x->data[i]);
    finish(out, "log");
    if (out->requires_grad) {
        record([x, out] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i] / x->data[i];
        });
    }
    return out;
}

TensorPtr Graph::clamp(const TensorPtr& x, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo must be <= hi");
    auto out = make_output(x->shape, x->requires_grad);
    for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = std::min(std::max(x->data[i], lo), hi);
    finish(out, "clamp");
    if (out->requires_grad) {
        record([x, out, lo, hi] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) {
                if (x->data[i] > lo && x->data[i] < hi) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr Graph::mean_over_axis(const TensorPtr& x, int axis) {
    if (x->ndim() != 2 || (axis != 0 && axis != 1)) {
        throw DimensionError("mean_over_axis: expected 2-D input and axis 0/1, got " +
                             shape_str(x->shape) + ", axis " + std::to_string(axis));
    }
    const int m = x->dim(0), n = x->dim(1);
    const int out_len = axis == 0 ? n : m;
    const int reduced = axis == 0 ? m : n;
    auto out = make_output({out_len}, x->requires_grad);
    if (axis == 0) {
        for (int c = 0; c < n; ++c) {
            double s = 0.0;
            for (int r = 0; r < m; ++r) s += x->at(r, c);
            out->data[c] = s / m;
        }
    } else {
        for (int r = 0; r < m; ++r) {
            double s = 0.0;
            for (int c = 0; c < n; ++c) s += x->at(r, c);
            out->data[r] = s / n;
        }
    }
    finish(out, "mean_over_axis");
    if (out->requires_grad) {
        record([x, out, axis, m, n, reduced] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            const double inv = 1.0 / reduced;
            for (int r = 0; r < m; ++r) {
                for (int c = 0; c < n; ++c) {
                    const double g = axis == 0 ? out->grad[c] : out->grad[r];
                    x->grad[static_cast<size_t>(r) * n + c] += g * inv;
                }
            }
        });
    }
    return out;
}

TensorPtr Graph::transpose2d(const TensorPtr& x) {
    if (x->ndim() != 2) {
        throw DimensionError("transpose2d: expected 2-D input, got " + shape_str(x->shape));
    }
    const int m = x->dim(0), n = x->dim(1);
    auto out = make_output({n, m}, x->requires_grad);
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) out->data[static_cast<size_t>(c) * m + r] = x->at(r, c);
    }
    finish(out, "transpose2d");
    if (out->requires_grad) {
        record([x, out, m, n] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (int r = 0; r < m; ++r) {
                for (int c = 0; c < n; ++c) {
                    x->grad[static_cast<size_t>(r) * n + c] += out->grad[static_cast<size_t>(c) * m + r];
                }
            }
        });
    }
    return out;
}

TensorPtr Graph::reshape(const TensorPtr& x, Shape shape) {
    if (shape_numel(shape) != x->numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x->shape) + " (" +
                             std::to_string(x->numel()) + " elements) as " + shape_str(shape));
    }
    auto out = make_output(std::move(shape), x->requires_grad);
    out->data = x->data;
    finish(out, "reshape");
    if (out->requires_grad) {
        record([x, out] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr Graph::channel_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                              double eps) {
    if (x->ndim() != 2) {
        throw DimensionError("channel_norm: expected 2-D input [C x N], got " + shape_str(x->shape));
    }
    const int c_n = x->dim(0), n = x->dim(1);
    if (gain->numel() != c_n || bias->numel() != c_n) {
        throw DimensionError("channel_norm: gain/bias must have " + std::to_string(c_n) +
                             " elements, got " + shape_str(gain->shape) + " and " +
                             shape_str(bias->shape));
    }
    auto out = make_output(x->shape, x->requires_grad || gain->requires_grad || bias->requires_grad);
    std::vector<double> inv_std(c_n), means(c_n);
    for (int c = 0; c < c_n; ++c) {
        const double* row = &x->data[static_cast<size_t>(c) * n];
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += row[i];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = row[i] - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        means[c] = mean;
        inv_std[c] = is;
        double* dst = &out->data[static_cast<size_t>(c) * n];
        const double g = gain->data[c], b = bias->data[c];
        for (int i = 0; i < n; ++i) dst[i] = (row[i] - mean) * is * g + b;
    }
    finish(out, "channel_norm");

    if (out->requires_grad) {
        record([x, gain, bias, out, means = std::move(means), inv_std = std::move(inv_std), c_n, n] {
            if (out->grad.empty()) return;
            for (int c = 0; c < c_n; ++c) {
                const double* row = &x->data[static_cast<size_t>(c) * n];
                const double* dy = &out->grad[static_cast<size_t>(c) * n];
                const double is = inv_std[c], mean = means[c], g = gain->data[c];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double xhat = (row[i] - mean) * is;
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * xhat;
                }
                if (gain->requires_grad) {
                    gain->ensure_grad();
                    gain->grad[c] += sum_dy_xhat;
                }
                if (bias->requires_grad) {
                    bias->ensure_grad();
                    bias->grad[c] += sum_dy;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    double* dx = &x->grad[static_cast<size_t>(c) * n];
                    const double mean_dy = sum_dy / n;
                    const double mean_dy_xhat = sum_dy_xhat / n;
                    for (int i = 0; i < n; ++i) {
                        const double xhat = (row[i] - mean) * is;
                        dx[i] += g * is * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr Graph::global_avg_pool(const TensorPtr& x) {
    if (x->ndim() != 2) {
        throw DimensionError("global_avg_pool: expected 2-D input [C x L], got " +
                             shape_str(x->shape));
    }
    const int c_n = x->dim(0), l = x->dim(1);
    auto out = make_output({c_n}, x->requires_grad);
    for (int c = 0; c < c_n; ++c) {
        double s = 0.0;
        const double* row = &x->data[static_cast<size_t>(c) * l];
        for (int i = 0; i < l; ++i) s += row[i];
        out->data[c] = s / l;
    }
    finish(out, "global_avg_pool");
    if (out->requires_grad) {
        record([x, out, c_n, l] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (int c = 0; c < c_n; ++c) {
                const double g = out->grad[c] / l;
                double* dst = &x->grad[static_cast<size_t>(c) * l];
                for (int i = 0; i < l; ++i) dst[i] += g;
            }
        });
    }
    return out;
}

TensorPtr Graph::avg_pool_cols(const TensorPtr& x, int out_cols) {
    if (x->ndim() != 2) {
        throw DimensionError("avg_pool_cols: expected 2-D input [C x N], got " + shape_str(x->shape));
    }
    if (out_cols < 1) throw DimensionError("avg_pool_cols: out_cols must be >= 1");
    const int c_n = x->dim(0), n = x->dim(1);
    auto out = make_output({c_n, out_cols}, x->requires_grad);
    // Bin i covers [floor(i*N/L), ceil((i+1)*N/L)); bins tile N and are never empty.
    std::vector<int> starts(out_cols), ends(out_cols);
    for (int i = 0; i < out_cols; ++i) {
        starts[i] = static_cast<int>((static_cast<int64_t>(i) * n) / out_cols);
        ends[i] = static_cast<int>((static_cast<int64_t>(i + 1) * n + out_cols - 1) / out_cols);
    }
    for (int c = 0; c < c_n; ++c) {
        const double* row = &x->data[static_cast<size_t>(c) * n];
        double* dst = &out->data[static_cast<size_t>(c) * out_cols];
        for (int i = 0; i < out_cols; ++i) {
            double s = 0.0;
            for (int t = starts[i]; t < ends[i]; ++t) s += row[t];
            dst[i] = s / (ends[i] - starts[i]);
        }
    }
    finish(out, "avg_pool_cols");
    if (out->requires_grad) {
        record([x, out, starts = std::move(starts), ends = std::move(ends), c_n, n, out_cols] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            for (int c = 0; c < c_n; ++c) {
                double* dx = &x->grad[static_cast<size_t>(c) * n];
                const double* dy = &out->grad[static_cast<size_t>(c) * out_cols];
                for (int i = 0; i < out_cols; ++i) {
                    const double g = dy[i] / (ends[i] - starts[i]);
                    for (int t = starts[i]; t < ends[i]; ++t) dx[t] += g;
                }
            }
        });
    }
    return out;
}

TensorPtr Graph::sum_all(const TensorPtr& x) {
    auto out = make_output({1}, x->requires_grad);
    double s = 0.0;
    for (double v : x->data) s += v;
    out->data[0] = s;
    finish(out, "sum_all");
    if (out->requires_grad) {
        record([x, out] {
            if (out->grad.empty() || !x->requires_grad) return;
            x->ensure_grad();
            const double g = out->grad[0];
            for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

TensorPtr Graph::detach(const TensorPtr& x) {
    auto out = Tensor::create(x->shape, false);
    out->data = x->data;
    return out;
}

void Graph::backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad || tape_.empty()) {
        throw ContractError("backward: loss was not produced by a recorded forward pass");
    }
    if (backward_run_) {
        throw ContractError("backward: called twice without new forward work");
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    backward_run_ = true;
}

} // namespace vizecg
