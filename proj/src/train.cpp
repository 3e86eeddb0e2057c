#include "train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <thread>

#include "rng.hpp"

namespace vizecg {

namespace {

TensorPtr one_minus(Graph& g, const TensorPtr& x) {
    return g.add(g.full(x->shape, 1.0), g.scale(x, -1.0));
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int resolve_threads(int requested, int work_items) {
    int n = requested;
    if (n <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n = hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
    }
    return std::max(1, std::min(n, work_items));
}

// Index-parallel loop; each index writes only its own slot, so results are
// identical for any thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace

void TrainConfig::validate() const {
    if (!(lr_min > 0) || !(lr_max >= lr_min)) {
        throw ContractError("train config: need 0 < lr_min <= lr_max");
    }
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
    if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
    if (lambda1 < 0 || lambda2 < 0) throw ContractError("train config: lambdas must be >= 0");
    if (!(threshold > 0 && threshold < 1)) {
        throw ContractError("train config: threshold must be in (0,1)");
    }
    if (!(eps > 0 && eps < 0.5)) throw ContractError("train config: eps must be in (0, 0.5)");
}

TensorPtr bce_multilabel(Graph& g, const std::array<bool, kClassCount>& target, const TensorPtr& p,
                         double eps) {
    if (p->numel() != kClassCount) {
        throw DimensionError("bce_multilabel: expected 6 probabilities, got " +
                             shape_str(p->shape));
    }
    std::vector<double> t(kClassCount), not_t(kClassCount);
    for (int c = 0; c < kClassCount; ++c) {
        t[static_cast<size_t>(c)] = target[static_cast<size_t>(c)] ? 1.0 : 0.0;
        not_t[static_cast<size_t>(c)] = 1.0 - t[static_cast<size_t>(c)];
    }
    auto pc = g.clamp(p, eps, 1.0 - eps);
    auto pos = g.mul(g.constant(p->shape, t), g.log(pc));
    auto neg = g.mul(g.constant(p->shape, not_t), g.log(one_minus(g, pc)));
    return g.scale(g.sum_all(g.add(pos, neg)), -1.0);
}

TensorPtr kd_kl(Graph& g, const TensorPtr& p_signal, const TensorPtr& p_image, double eps,
                bool teacher_detach) {
    if (p_signal->shape != p_image->shape) {
        throw DimensionError("kd_kl: probability shapes differ: " + shape_str(p_signal->shape) +
                             " vs " + shape_str(p_image->shape));
    }
    auto ps = g.clamp(teacher_detach ? g.detach(p_signal) : p_signal, eps, 1.0 - eps);
    auto pi = g.clamp(p_image, eps, 1.0 - eps);
    auto ps1 = one_minus(g, ps);
    auto pi1 = one_minus(g, pi);
    // the Bernoulli support {1, 0} per class
    auto on = g.mul(ps, g.add(g.log(ps), g.scale(g.log(pi), -1.0)));
    auto off = g.mul(ps1, g.add(g.log(ps1), g.scale(g.log(pi1), -1.0)));
    return g.sum_all(g.add(on, off));
}

TensorPtr total_loss(Graph& g, const TensorPtr& cls, const TensorPtr& kd, double lambda1,
                     double lambda2) {
    return g.add(g.scale(cls, lambda1), g.scale(kd, lambda2));
}

double cosine_lr(int step, int total_steps, double lr_max, double lr_min) {
    if (total_steps < 1) throw ContractError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    }
    if (!(lr_min > 0) || !(lr_max >= lr_min)) {
        throw ContractError("cosine_lr: need 0 < lr_min <= lr_max");
    }
    if (step == 0) return lr_max;
    if (step == total_steps) return lr_min;
    const double phase = M_PI * static_cast<double>(step) / total_steps;
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

void AdamOptimizer::step(const std::vector<TensorPtr>& params, double lr) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->data.size(), 0.0);
            v_[i].assign(params[i]->data.size(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw ContractError("adam_step: parameter list changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.has_grad()) {
            throw ContractError("adam_step: parameter " + std::to_string(i) +
                                " has no gradient (backward not run?)");
        }
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t e = 0; e < p.data.size(); ++e) {
            const double grad = p.grad[e];
            m[e] = beta1_ * m[e] + (1.0 - beta1_) * grad;
            v[e] = beta2_ * v[e] + (1.0 - beta2_) * grad * grad;
            const double m_hat = m[e] / bc1;
            const double v_hat = v[e] / bc2;
            p.data[e] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

MetricsReport compute_metrics(const std::vector<std::array<double, kClassCount>>& predictions,
                              const std::vector<std::array<bool, kClassCount>>& labels,
                              double threshold) {
    if (predictions.size() != labels.size()) {
        throw ContractError("compute_metrics: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(labels.size()) + " labels");
    }
    if (!(threshold > 0 && threshold < 1)) {
        throw ContractError("compute_metrics: threshold must be in (0,1)");
    }
    MetricsReport r;
    for (size_t i = 0; i < predictions.size(); ++i) {
        for (int c = 0; c < kClassCount; ++c) {
            const bool pred = predictions[i][static_cast<size_t>(c)] >= threshold;
            const bool truth = labels[i][static_cast<size_t>(c)];
            if (pred && truth)
                ++r.tp[static_cast<size_t>(c)];
            else if (pred && !truth)
                ++r.fp[static_cast<size_t>(c)];
            else if (!pred && truth)
                ++r.fn[static_cast<size_t>(c)];
            else
                ++r.tn[static_cast<size_t>(c)];
        }
    }
    for (int c = 0; c < kClassCount; ++c) {
        const size_t i = static_cast<size_t>(c);
        const long p_den = r.tp[i] + r.fp[i];
        const long r_den = r.tp[i] + r.fn[i];
        r.precision[i] = p_den > 0 ? static_cast<double>(r.tp[i]) / p_den : 0.0;
        r.recall[i] = r_den > 0 ? static_cast<double>(r.tp[i]) / r_den : 0.0;
        const double pr = r.precision[i] + r.recall[i];
        r.f1[i] = pr > 0 ? 2.0 * r.precision[i] * r.recall[i] / pr : 0.0;
        r.macro_precision += r.precision[i] / kClassCount;
        r.macro_recall += r.recall[i] / kClassCount;
        r.macro_f1 += r.f1[i] / kClassCount;
    }
    return r;
}

std::string MetricsReport::to_csv() const {
    std::string out = "class,precision,recall,f1,tp,fp,fn,tn\n";
    for (int c = 0; c < kClassCount; ++c) {
        const size_t i = static_cast<size_t>(c);
        out += std::string(class_name(c)) + "," + fmt_double(precision[i]) + "," +
               fmt_double(recall[i]) + "," + fmt_double(f1[i]) + "," + std::to_string(tp[i]) + "," +
               std::to_string(fp[i]) + "," + std::to_string(fn[i]) + "," + std::to_string(tn[i]) +
               "\n";
    }
    out += "macro," + fmt_double(macro_precision) + "," + fmt_double(macro_recall) + "," +
           fmt_double(macro_f1) + ",,,,\n";
    return out;
}

std::string TrainingLog::to_text() const {
    std::string out;
    size_t next_step = 0;
    for (const EpochLog& e : epochs) {
        out += "epoch=" + std::to_string(e.epoch) + " val_kd=" + fmt_double(e.val_kd) +
               " val_macro_f1=" + fmt_double(e.val_macro_f1) + "\n";
        while (next_step < steps.size() && steps[next_step].epoch <= e.epoch + 1) {
            const StepLog& s = steps[next_step];
            out += "step=" + std::to_string(s.step) + " lr=" + fmt_double(s.lr) +
                   " cls=" + fmt_double(s.cls) + " kd=" + fmt_double(s.kd) +
                   " total=" + fmt_double(s.total) + "\n";
            ++next_step;
        }
    }
    return out;
}

EcgImage render_for_model(const EcgRecord& detrended, const ModelConfig& cfg) {
    LayoutSpec layout; // defaults: 6x2, grid off
    return render_record(detrended, layout, cfg.image_h, cfg.image_w);
}

namespace {

struct PreparedData {
    std::vector<EcgRecord> records; // detrended
    std::vector<EcgImage> images;   // rendered at model input size
};

PreparedData prepare(const Dataset& ds, const ModelConfig& cfg, const std::vector<int>& indices,
                     int threads) {
    PreparedData out;
    out.records.resize(indices.size());
    out.images.resize(indices.size());
    parallel_for(static_cast<int>(indices.size()), threads, [&](int i) {
        const EcgRecord& raw = ds.records[static_cast<size_t>(indices[static_cast<size_t>(i)])];
        out.records[static_cast<size_t>(i)] = detrend(raw);
        out.images[static_cast<size_t>(i)] =
            render_for_model(out.records[static_cast<size_t>(i)], cfg);
    });
    return out;
}

struct RecordGrads {
    std::vector<std::vector<double>> grads;
    double cls = 0.0, kd = 0.0, total = 0.0;
};

RecordGrads backprop_record(const ModelState& master, const EcgRecord& rec, const EcgImage& img,
                            const TrainConfig& cfg) {
    ModelState local = master.clone();
    Graph g;
    auto fwd = local.forward_train(g, rec, img);
    auto cls = g.add(bce_multilabel(g, rec.labels(), fwd.p_signal, cfg.eps),
                     bce_multilabel(g, rec.labels(), fwd.p_image, cfg.eps));
    RecordGrads out;
    TensorPtr loss;
    if (cfg.lambda2 == 0.0) {
        // KD term disabled; keep the log line exact
        loss = g.scale(cls, cfg.lambda1);
        out.kd = 0.0;
    } else {
        auto kd = kd_kl(g, fwd.p_signal, fwd.p_image, cfg.eps, cfg.kd_teacher_detach);
        out.kd = kd->data[0];
        loss = total_loss(g, cls, kd, cfg.lambda1, cfg.lambda2);
    }
    out.cls = cls->data[0];
    out.total = loss->data[0];
    if (!std::isfinite(out.total)) return out; // caller raises with step context
    g.backward(loss);
    auto params = local.parameters();
    out.grads.reserve(params.size());
    for (auto& p : params) {
        p->ensure_grad();
        out.grads.push_back(std::move(p->grad));
    }
    return out;
}

double kd_value(const std::array<double, kClassCount>& ps, const std::array<double, kClassCount>& pi,
                double eps) {
    double kd = 0.0;
    for (int c = 0; c < kClassCount; ++c) {
        const double a = std::clamp(ps[static_cast<size_t>(c)], eps, 1.0 - eps);
        const double b = std::clamp(pi[static_cast<size_t>(c)], eps, 1.0 - eps);
        kd += a * (std::log(a) - std::log(b)) + (1.0 - a) * (std::log(1.0 - a) - std::log(1.0 - b));
    }
    return kd;
}

} // namespace

TrainingLog fit(ModelState& state, const Dataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    state.set_ablation(cfg.enable_cmam, cfg.enable_smam);

    const SplitIndices split = dataset.split();
    if (split.train.empty()) throw ContractError("fit: training split is empty");
    // Per-epoch validation uses the val split, or the test split when no
    // validation fraction is configured.
    const std::vector<int>& val_idx = split.val.empty() ? split.test : split.val;

    const int threads = resolve_threads(cfg.threads, cfg.batch_size);
    const PreparedData train_data = prepare(dataset, state.config(), split.train, threads);
    const PreparedData val_data = prepare(dataset, state.config(), val_idx, threads);

    const int n_train = static_cast<int>(split.train.size());
    const int batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const int total_steps = cfg.epochs * batches_per_epoch;

    TrainingLog log;

    auto run_validation = [&](int epoch) {
        EpochLog e;
        e.epoch = epoch;
        if (val_data.records.empty()) {
            log.epochs.push_back(e);
            return;
        }
        const int n = static_cast<int>(val_data.records.size());
        std::vector<std::array<double, kClassCount>> preds(static_cast<size_t>(n));
        std::vector<std::array<bool, kClassCount>> truths(static_cast<size_t>(n));
        std::vector<double> kds(static_cast<size_t>(n));
        parallel_for(n, threads, [&](int i) {
            const size_t s = static_cast<size_t>(i);
            Graph g(false);
            auto fwd = state.forward_train(g, val_data.records[s], val_data.images[s]);
            std::array<double, kClassCount> ps{}, pi{};
            for (int c = 0; c < kClassCount; ++c) {
                ps[static_cast<size_t>(c)] = fwd.p_signal->data[static_cast<size_t>(c)];
                pi[static_cast<size_t>(c)] = fwd.p_image->data[static_cast<size_t>(c)];
            }
            kds[s] = kd_value(ps, pi, cfg.eps);
            Graph g2(false);
            auto probs = state.forward_infer(g2, val_data.images[s]);
            for (int c = 0; c < kClassCount; ++c) {
                preds[s][static_cast<size_t>(c)] = probs->data[static_cast<size_t>(c)];
            }
            truths[s] = val_data.records[s].labels();
        });
        double kd_sum = 0.0;
        for (double k : kds) kd_sum += k;
        e.val_kd = kd_sum / n;
        e.val_macro_f1 = compute_metrics(preds, truths, cfg.threshold).macro_f1;
        log.epochs.push_back(e);
    };

    run_validation(0);

    auto params = state.parameters();
    AdamOptimizer adam;
    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order(static_cast<size_t>(n_train));
        for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, 0xe90c * static_cast<uint64_t>(epoch)));
        for (int i = n_train - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.next_below(static_cast<uint64_t>(i) + 1));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        for (int b = 0; b < batches_per_epoch; ++b) {
            const int lo = b * cfg.batch_size;
            const int hi = std::min(n_train, lo + cfg.batch_size);
            const int batch_n = hi - lo;
            const double lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);

            std::vector<RecordGrads> results(static_cast<size_t>(batch_n));
            parallel_for(batch_n, threads, [&](int i) {
                const size_t idx = static_cast<size_t>(order[static_cast<size_t>(lo + i)]);
                results[static_cast<size_t>(i)] =
                    backprop_record(state, train_data.records[idx], train_data.images[idx], cfg);
            });

            StepLog s;
            s.step = step + 1;
            s.epoch = epoch;
            s.lr = lr;
            for (const auto& r : results) {
                if (!std::isfinite(r.total)) {
                    throw NumericError("fit: non-finite loss at step " + std::to_string(step + 1));
                }
                s.cls += r.cls / batch_n;
                s.kd += r.kd / batch_n;
                s.total += r.total / batch_n;
            }

            // Batch-mean gradient, reduced in record order for determinism.
            for (size_t pi = 0; pi < params.size(); ++pi) {
                params[pi]->ensure_grad();
                auto& dst = params[pi]->grad;
                std::fill(dst.begin(), dst.end(), 0.0);
                for (const auto& r : results) {
                    const auto& src = r.grads[pi];
                    for (size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
                }
                const double inv = 1.0 / batch_n;
                for (auto& v : dst) v *= inv;
            }
            adam.step(params, lr);
            for (auto& p : params) p->zero_grad();

            log.steps.push_back(s);
            ++step;
        }
        run_validation(epoch);
    }
    return log;
}

MetricsReport evaluate(const ModelState& state, const Dataset& dataset,
                       const std::vector<int>& indices, InferenceMode mode, double threshold) {
    if (indices.empty()) throw ContractError("evaluate: empty index list");
    const int threads = resolve_threads(0, static_cast<int>(indices.size()));
    const PreparedData data = prepare(dataset, state.config(), indices, threads);
    const int n = static_cast<int>(indices.size());
    std::vector<std::array<double, kClassCount>> preds(static_cast<size_t>(n));
    std::vector<std::array<bool, kClassCount>> truths(static_cast<size_t>(n));
    parallel_for(n, threads, [&](int i) {
        const size_t s = static_cast<size_t>(i);
        Graph g(false);
        TensorPtr probs;
        if (mode == InferenceMode::Signal) {
            probs = state.forward_train(g, data.records[s], data.images[s]).p_signal;
        } else {
            probs = state.forward_infer(g, data.images[s]);
        }
        for (int c = 0; c < kClassCount; ++c) {
            preds[s][static_cast<size_t>(c)] = probs->data[static_cast<size_t>(c)];
        }
        truths[s] = data.records[s].labels();
    });
    return compute_metrics(preds, truths, threshold);
}

GradCheckReport gradcheck_end_to_end(uint64_t seed, double step, double tol, int batch) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.init_seed = mix_seed(seed, 0xe2e);
    ModelState state(cfg);

    Rng rng(mix_seed(seed, 0xda7a));
    std::vector<EcgRecord> records;
    std::vector<EcgImage> images;
    std::vector<std::array<bool, kClassCount>> targets;
    for (int b = 0; b < batch; ++b) {
        EcgRecord rec;
        rec.t_len = 64;
        rec.samples.resize(static_cast<size_t>(kLeadCount) * 64);
        for (auto& s : rec.samples) s = rng.next_gaussian();
        EcgImage img;
        img.height = 16;
        img.width = 16;
        img.pixels.resize(256);
        for (auto& p : img.pixels) p = rng.next_double();
        std::array<bool, kClassCount> t{};
        for (auto& v : t) v = rng.next_double() < 0.4;
        records.push_back(std::move(rec));
        images.push_back(std::move(img));
        targets.push_back(t);
    }

    auto builder = [&](Graph& g, const std::vector<TensorPtr>&) {
        TensorPtr acc;
        for (size_t b = 0; b < records.size(); ++b) {
            auto fwd = state.forward_train(g, records[b], images[b]);
            auto cls = g.add(bce_multilabel(g, targets[b], fwd.p_signal, 1e-7),
                             bce_multilabel(g, targets[b], fwd.p_image, 1e-7));
            auto kd = kd_kl(g, fwd.p_signal, fwd.p_image, 1e-7, false);
            auto loss = total_loss(g, cls, kd, 1.0, 1.0);
            acc = acc ? g.add(acc, loss) : loss;
        }
        return acc;
    };

    auto report = gradcheck("end_to_end", builder, state.parameters(), seed, step, tol);
    report.name = "end_to_end";
    return report;
}

} // namespace vizecg
