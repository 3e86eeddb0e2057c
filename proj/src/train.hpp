#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "model.hpp"

namespace vizecg {

struct TrainConfig {
    double lr_max = 1e-3;
    double lr_min = 1e-6;
    int batch_size = 16;
    int epochs = 30; // desk-scale default; reference recipe uses 300
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    uint64_t seed = 0;
    bool kd_teacher_detach = false;
    bool enable_cmam = true;
    bool enable_smam = true;
    double threshold = 0.5;
    double eps = 1e-7; // probability clamp before any logarithm
    int threads = 0;   // 0 = auto

    void validate() const;
};

struct MetricsReport {
    std::array<double, kClassCount> precision{}, recall{}, f1{};
    std::array<long, kClassCount> tp{}, fp{}, fn{}, tn{};
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;

    std::string to_csv() const; // 6 class rows + 1 macro row
};

struct StepLog {
    int step = 0;
    int epoch = 0;
    double lr = 0.0, cls = 0.0, kd = 0.0, total = 0.0;
};

struct EpochLog {
    int epoch = 0; // 0 = before any update
    double val_kd = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainingLog {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;

    // Line-delimited structured text, identical bytes for identical runs.
    std::string to_text() const;
};

enum class InferenceMode { Signal, Image };

// --- losses (graph compositions, differentiable w.r.t. probabilities) ---

// Sum over classes of binary cross-entropy against a 0/1 target vector.
TensorPtr bce_multilabel(Graph& g, const std::array<bool, kClassCount>& target, const TensorPtr& p,
                         double eps);

// Per-class KL between Bernoulli(p_signal_c) and Bernoulli(p_image_c),
// summed over classes. teacher_detach stops gradient into the signal stream.
TensorPtr kd_kl(Graph& g, const TensorPtr& p_signal, const TensorPtr& p_image, double eps,
                bool teacher_detach);

TensorPtr total_loss(Graph& g, const TensorPtr& cls, const TensorPtr& kd, double lambda1,
                     double lambda2);

// --- optimization ---

// lr_min + 0.5*(lr_max - lr_min)*(1 + cos(pi*step/total_steps)), no restarts.
double cosine_lr(int step, int total_steps, double lr_max, double lr_min);

class AdamOptimizer {
public:
    AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Reads each parameter's populated grad; errors if one is missing.
    void step(const std::vector<TensorPtr>& params, double lr);

private:
    double beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// --- metrics ---

MetricsReport compute_metrics(const std::vector<std::array<double, kClassCount>>& predictions,
                              const std::vector<std::array<bool, kClassCount>>& labels,
                              double threshold);

// --- pipeline ---

// Preprocessing used everywhere a record enters the model: detrend, then
// render the printed-image companion at the model's input size (grid off).
EcgImage render_for_model(const EcgRecord& detrended, const ModelConfig& cfg);

TrainingLog fit(ModelState& state, const Dataset& dataset, const TrainConfig& cfg);

MetricsReport evaluate(const ModelState& state, const Dataset& dataset,
                       const std::vector<int>& indices, InferenceMode mode, double threshold);

// End-to-end gradient check of the tiny configuration: every parameter of
// the full two-stream model + loss stack against central differences.
GradCheckReport gradcheck_end_to_end(uint64_t seed, double step = 1e-5, double tol = 1e-4,
                                     int batch = 1);

} // namespace vizecg
