#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rng.hpp"

namespace vizecg {

namespace {

double eval_projected(const OpBuilder& builder, const std::vector<TensorPtr>& inputs,
                      const std::vector<double>& weights) {
    Graph g(false); // pure evaluation, no tape
    TensorPtr y = builder(g, inputs);
    if (y->numel() == 1) return y->data[0];
    double s = 0.0;
    for (size_t i = 0; i < y->data.size(); ++i) s += y->data[i] * weights[i];
    return s;
}

TensorPtr random_tensor(Rng& rng, Shape shape, double lo, double hi) {
    auto t = Tensor::create(std::move(shape));
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Push every element at least `margin` away from the given kink value.
void avoid_kink(TensorPtr& t, double kink, double margin) {
    for (auto& v : t->data) {
        if (std::abs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin);
    }
}

} // namespace

GradCheckReport gradcheck(const std::string& name, const OpBuilder& builder,
                          std::vector<TensorPtr> inputs, uint64_t seed, double step, double tol) {
    GradCheckReport report;
    report.name = name;

    for (auto& in : inputs) {
        in->requires_grad = true;
        in->grad.clear();
    }

    // Analytic pass.
    Graph g;
    TensorPtr y = builder(g, inputs);
    std::vector<double> weights;
    TensorPtr loss;
    if (y->numel() == 1) {
        loss = y;
    } else {
        Rng wrng(mix_seed(seed, 0x9a2f));
        weights.resize(y->data.size());
        for (auto& w : weights) w = wrng.uniform(-1.0, 1.0);
        loss = g.sum_all(g.mul(y, g.constant(y->shape, weights)));
    }
    g.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        in->ensure_grad();
        analytic.push_back(in->grad);
    }

    // Numeric pass, one central difference per input element. A probe that
    // misses tolerance is re-measured at smaller steps: a genuinely wrong
    // adjoint stays wrong at every step, while a probe that merely straddled
    // a relu/clamp kink converges once the step no longer crosses it.
    report.max_rel_err_per_input.assign(inputs.size(), 0.0);
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t e = 0; e < inputs[i]->data.size(); ++e) {
            double& x = inputs[i]->data[e];
            const double saved = x;
            const double a = analytic[i][e];
            double best_rel = 0.0;
            double h = step;
            for (int attempt = 0; attempt < 3; ++attempt, h /= 16.0) {
                x = saved + h;
                const double f_plus = eval_projected(builder, inputs, weights);
                x = saved - h;
                const double f_minus = eval_projected(builder, inputs, weights);
                x = saved;
                const double numeric = (f_plus - f_minus) / (2.0 * h);
                const double rel =
                    std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
                if (attempt == 0 || rel < best_rel) best_rel = rel;
                if (best_rel < tol) break;
            }
            report.max_rel_err_per_input[i] = std::max(report.max_rel_err_per_input[i], best_rel);
        }
    }
    report.max_rel_err =
        *std::max_element(report.max_rel_err_per_input.begin(), report.max_rel_err_per_input.end());
    report.pass = report.max_rel_err < tol;
    return report;
}

std::vector<GradCheckReport> gradcheck_tensor_ops(uint64_t seed, double step, double tol) {
    std::vector<GradCheckReport> reports;
    Rng rng(mix_seed(seed, 0x6f1d));
    const double margin = 1e3 * step;

    auto run = [&](const std::string& name, const OpBuilder& b, std::vector<TensorPtr> inputs) {
        reports.push_back(gradcheck(name, b, std::move(inputs), seed, step, tol));
    };

    run("matmul",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.matmul(in[0], in[1]); },
        {random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {4, 2}, -1, 1)});

    run("softmax_rows",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.softmax_rows(in[0]); },
        {random_tensor(rng, {3, 5}, -2, 2)});

    run("conv1d",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.conv1d(in[0], in[1], 2, 1); },
        {random_tensor(rng, {2, 9}, -1, 1), random_tensor(rng, {3, 2, 3}, -1, 1)});

    run("conv2d",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.conv2d(in[0], in[1], 2, 1); },
        {random_tensor(rng, {2, 6, 5}, -1, 1), random_tensor(rng, {3, 2, 3, 3}, -1, 1)});

    {
        auto x = random_tensor(rng, {4, 4}, -1, 1);
        avoid_kink(x, 0.0, margin);
        run("relu", [](Graph& g, const std::vector<TensorPtr>& in) { return g.relu(in[0]); }, {x});
    }

    run("sigmoid", [](Graph& g, const std::vector<TensorPtr>& in) { return g.sigmoid(in[0]); },
        {random_tensor(rng, {3, 3}, -3, 3)});

    run("add", [](Graph& g, const std::vector<TensorPtr>& in) { return g.add(in[0], in[1]); },
        {random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {3, 4}, -1, 1)});

    run("mul", [](Graph& g, const std::vector<TensorPtr>& in) { return g.mul(in[0], in[1]); },
        {random_tensor(rng, {3, 4}, -1, 1), random_tensor(rng, {3, 4}, -1, 1)});

    run("scale", [](Graph& g, const std::vector<TensorPtr>& in) { return g.scale(in[0], -2.5); },
        {random_tensor(rng, {2, 6}, -1, 1)});

    run("log", [](Graph& g, const std::vector<TensorPtr>& in) { return g.log(in[0]); },
        {random_tensor(rng, {3, 3}, 0.2, 2.0)});

    {
        auto x = random_tensor(rng, {4, 4}, -1, 1);
        avoid_kink(x, -0.5, margin);
        avoid_kink(x, 0.5, margin);
        run("clamp",
            [](Graph& g, const std::vector<TensorPtr>& in) { return g.clamp(in[0], -0.5, 0.5); },
            {x});
    }

    run("mean_over_axis0",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.mean_over_axis(in[0], 0); },
        {random_tensor(rng, {4, 3}, -1, 1)});

    run("mean_over_axis1",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.mean_over_axis(in[0], 1); },
        {random_tensor(rng, {4, 3}, -1, 1)});

    run("transpose2d",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.transpose2d(in[0]); },
        {random_tensor(rng, {3, 5}, -1, 1)});

    run("reshape",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.reshape(in[0], {5, 3}); },
        {random_tensor(rng, {3, 5}, -1, 1)});

    run("channel_norm",
        [](Graph& g, const std::vector<TensorPtr>& in) {
            return g.channel_norm(in[0], in[1], in[2]);
        },
        {random_tensor(rng, {3, 7}, -1, 1), random_tensor(rng, {3}, 0.5, 1.5),
         random_tensor(rng, {3}, -0.5, 0.5)});

    run("global_avg_pool",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.global_avg_pool(in[0]); },
        {random_tensor(rng, {4, 6}, -1, 1)});

    run("avg_pool_cols",
        [](Graph& g, const std::vector<TensorPtr>& in) { return g.avg_pool_cols(in[0], 3); },
        {random_tensor(rng, {3, 7}, -1, 1)});

    run("sum_all", [](Graph& g, const std::vector<TensorPtr>& in) { return g.sum_all(in[0]); },
        {random_tensor(rng, {4, 4}, -1, 1)});

    return reports;
}

} // namespace vizecg
