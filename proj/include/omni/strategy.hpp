#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omni/error.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

// ---------------------------------------------------------------------------
// Constructed-interference suite: three linear recovery tasks (named after
// the modalities they mirror) share a rank-2 bottleneck that cannot hold all
// three task directions at once. Joint training therefore trades the tasks
// off against each other, while a staged schedule can lock in the first task
// before the others arrive. Everything is linear, so per-task optima have a
// closed form the tests can verify independently.

struct MixRecipe {
    std::string strategy;                  // progressive | direct-mix | balanced
    std::map<std::string, double> weights; // per-task sampling weights

    void validate() const {
        if (strategy != "progressive" && strategy != "direct-mix" && strategy != "balanced") {
            throw InputError("unknown strategy: " + strategy);
        }
        if (weights.empty()) throw InputError("recipe has no task weights");
        double total = 0.0;
        for (const auto& [task, w] : weights) {
            if (w < 0.0) throw InputError("negative weight for task " + task);
            total += w;
        }
        if (total <= 0.0) throw InputError("all task weights are zero");
    }
};

struct InterferenceSuite {
    static constexpr int kTasks = 3;
    static constexpr int kDimIn = 6;
    static constexpr int kRank = 2;
    static constexpr int kDimOut = 2;

    std::array<std::string, kTasks> task_names = {"image", "video", "audio"};
    std::array<Tensor, kTasks> direction;  // 1 x kDimIn input direction per task
    std::array<Tensor, kTasks> target;     // 1 x kDimOut output direction per task
    float noise = 0.05f;
    std::uint64_t seed = 0;

    static InterferenceSuite seeded(std::uint64_t seed) {
        InterferenceSuite s;
        s.seed = seed;
        Rng rng(seed);
        for (int t = 0; t < kTasks; ++t) {
            // Orthogonal input directions: no rank-2 bottleneck can hold all
            // three, which is the interference under study.
            s.direction[t] = Tensor({1, kDimIn});
            s.direction[t].at(0, t) = 1.0f;
            s.target[t] = Tensor({1, kDimOut});
            s.target[t].at(0, 0) = 1.0f + 0.25f * static_cast<float>(t);
            s.target[t].at(0, 1) = t % 2 == 0 ? 0.5f : -0.5f;
        }
        (void)rng;
        return s;
    }

    // x = z * direction + noise, y = z * target; z uniform in [-1, 1].
    void sample(int task, Rng& rng, Tensor& x, Tensor& y, int n) const {
        x = Tensor({n, kDimIn});
        y = Tensor({n, kDimOut});
        for (int i = 0; i < n; ++i) {
            const float z = static_cast<float>(rng.uniform(-1.0, 1.0));
            for (int j = 0; j < kDimIn; ++j) {
                x.at(i, j) = z * direction[task].at(0, j) +
                             noise * static_cast<float>(rng.uniform(-1.0, 1.0));
            }
            for (int j = 0; j < kDimOut; ++j) y.at(i, j) = z * target[task].at(0, j);
        }
    }

    // Unconstrained least-squares optimum of a full linear map on a fixed
    // sample: the floor any rank-2 factorization is measured against.
    double closed_form_loss(int task, int n_samples, std::uint64_t eval_seed) const {
        Rng rng(eval_seed);
        Tensor x, y;
        sample(task, rng, x, y, n_samples);
        // Normal equations in double: (X^T X) M = X^T Y.
        double xtx[kDimIn][kDimIn] = {};
        double xty[kDimIn][kDimOut] = {};
        for (int i = 0; i < n_samples; ++i) {
            for (int a = 0; a < kDimIn; ++a) {
                for (int b = 0; b < kDimIn; ++b) xtx[a][b] += (double)x.at(i, a) * x.at(i, b);
                for (int b = 0; b < kDimOut; ++b) xty[a][b] += (double)x.at(i, a) * y.at(i, b);
            }
        }
        // Gaussian elimination with partial pivoting.
        for (int col = 0; col < kDimIn; ++col) {
            int pivot = col;
            for (int r = col + 1; r < kDimIn; ++r) {
                if (std::abs(xtx[r][col]) > std::abs(xtx[pivot][col])) pivot = r;
            }
            std::swap(xtx[col], xtx[pivot]);
            std::swap(xty[col], xty[pivot]);
            if (std::abs(xtx[col][col]) < 1e-12) throw NumericError("singular normal equations");
            for (int r = 0; r < kDimIn; ++r) {
                if (r == col) continue;
                const double f = xtx[r][col] / xtx[col][col];
                for (int c2 = 0; c2 < kDimIn; ++c2) xtx[r][c2] -= f * xtx[col][c2];
                for (int c2 = 0; c2 < kDimOut; ++c2) xty[r][c2] -= f * xty[col][c2];
            }
        }
        double m[kDimIn][kDimOut];
        for (int r = 0; r < kDimIn; ++r) {
            for (int c2 = 0; c2 < kDimOut; ++c2) m[r][c2] = xty[r][c2] / xtx[r][r];
        }
        double loss = 0.0;
        for (int i = 0; i < n_samples; ++i) {
            for (int c2 = 0; c2 < kDimOut; ++c2) {
                double pred = 0.0;
                for (int a = 0; a < kDimIn; ++a) pred += x.at(i, a) * m[a][c2];
                const double e = pred - y.at(i, c2);
                loss += e * e;
            }
        }
        return loss / n_samples;
    }

    int task_index(const std::string& name) const {
        for (int t = 0; t < kTasks; ++t) {
            if (task_names[t] == name) return t;
        }
        throw InputError("unknown suite task: " + name);
    }
};

// ---------------------------------------------------------------------------
// The shared-bottleneck model under comparison.

struct BottleneckModel {
    Tensor w;  // kDimIn x kRank, shared
    std::array<Tensor, InterferenceSuite::kTasks> heads;  // kRank x kDimOut

    static BottleneckModel seeded(std::uint64_t seed) {
        Rng rng(seed);
        BottleneckModel m;
        m.w = Tensor::random_uniform({InterferenceSuite::kDimIn, InterferenceSuite::kRank}, rng,
                                     0.5f);
        for (auto& h : m.heads) {
            h = Tensor::random_uniform({InterferenceSuite::kRank, InterferenceSuite::kDimOut},
                                       rng, 0.5f);
        }
        return m;
    }

    double loss(const InterferenceSuite&, int task, const Tensor& x, const Tensor& y) const {
        const Tensor pred = matmul(matmul(x, w), heads[task]);
        double total = 0.0;
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            const double e = pred.data[i] - y.data[i];
            total += e * e;
        }
        return total / x.shape[0];
    }

    // One SGD step on task; returns the batch loss before the update.
    double step(int task, const Tensor& x, const Tensor& y, float lr, bool train_shared) {
        const Tensor mid = matmul(x, w);
        const Tensor pred = matmul(mid, heads[task]);
        const int n = x.shape[0];
        Tensor dpred({n, InterferenceSuite::kDimOut});
        double total = 0.0;
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            const double e = pred.data[i] - y.data[i];
            total += e * e;
            dpred.data[i] = static_cast<float>(2.0 * e / n);
        }
        MatmulGrads head_g = matmul_backward(mid, heads[task], dpred);
        MatmulGrads shared_g = matmul_backward(x, w, head_g.da);
        for (std::size_t i = 0; i < heads[task].data.size(); ++i) {
            heads[task].data[i] -= lr * head_g.db.data[i];
        }
        if (train_shared) {
            for (std::size_t i = 0; i < w.data.size(); ++i) {
                w.data[i] -= lr * shared_g.db.data[i];
            }
        }
        return total / n;
    }
};

// ---------------------------------------------------------------------------
// Strategy runs and the machine-readable report

struct StrategyCurve {
    std::string strategy;
    std::uint64_t seed = 0;
    // loss[step][task] evaluated on the fixed per-task eval sets
    std::vector<std::array<double, InterferenceSuite::kTasks>> loss;

    std::array<double, InterferenceSuite::kTasks> final_loss() const {
        return loss.empty() ? std::array<double, InterferenceSuite::kTasks>{} : loss.back();
    }
};

struct CompareOptions {
    int steps = 300;
    int batch = 16;
    float lr = 0.05f;
    int eval_samples = 256;
};

inline StrategyCurve run_recipe(const InterferenceSuite& suite, const MixRecipe& recipe,
                                std::uint64_t seed, CompareOptions opt = {}) {
    recipe.validate();
    constexpr int kTasks = InterferenceSuite::kTasks;

    // Fixed eval sets shared by every strategy under this suite seed.
    std::array<Tensor, kTasks> eval_x, eval_y;
    for (int t = 0; t < kTasks; ++t) {
        Rng eval_rng(suite.seed * 1000003 + t);
        suite.sample(t, eval_rng, eval_x[t], eval_y[t], opt.eval_samples);
    }

    std::array<double, kTasks> weights = {};
    for (const auto& [name, w] : recipe.weights) weights[suite.task_index(name)] = w;
    if (recipe.strategy == "balanced") {
        for (int t = 0; t < kTasks; ++t) weights[t] = weights[t] > 0.0 ? 1.0 : 0.0;
    }

    BottleneckModel model = BottleneckModel::seeded(seed);
    Rng rng(seed + 17);
    StrategyCurve curve;
    curve.strategy = recipe.strategy;
    curve.seed = seed;

    const int phase_len = (opt.steps + kTasks - 1) / kTasks;
    for (int step = 0; step < opt.steps; ++step) {
        int task;
        bool train_shared;
        if (recipe.strategy == "progressive") {
            // Phase k admits tasks 0..k; the shared bottleneck trains only
            // in the first phase, mirroring the frozen-encoder schedule.
            const int phase = std::min(step / phase_len, kTasks - 1);
            double total = 0.0;
            for (int t = 0; t <= phase; ++t) total += weights[t];
            if (total <= 0.0) throw InputError("progressive phase has zero total weight");
            double pick = rng.uniform() * total;
            task = phase;
            for (int t = 0; t <= phase; ++t) {
                if (pick < weights[t]) {
                    task = t;
                    break;
                }
                pick -= weights[t];
            }
            train_shared = phase == 0;
        } else {
            double total = 0.0;
            for (int t = 0; t < kTasks; ++t) total += weights[t];
            double pick = rng.uniform() * total;
            task = kTasks - 1;
            for (int t = 0; t < kTasks; ++t) {
                if (pick < weights[t]) {
                    task = t;
                    break;
                }
                pick -= weights[t];
            }
            train_shared = true;
        }
        Tensor x, y;
        suite.sample(task, rng, x, y, opt.batch);
        model.step(task, x, y, opt.lr, train_shared);

        std::array<double, kTasks> row;
        for (int t = 0; t < kTasks; ++t) row[t] = model.loss(suite, t, eval_x[t], eval_y[t]);
        curve.loss.push_back(row);
    }
    return curve;
}

struct StrategyReport {
    InterferenceSuite suite;
    CompareOptions options;
    std::vector<StrategyCurve> curves;  // one per (recipe, seed), recipe-major
};

// Runs every recipe on the same suite across the given seeds. At least two
// recipes are required: one run is not a comparison.
inline StrategyReport compare_strategies(const InterferenceSuite& suite,
                                         const std::vector<MixRecipe>& recipes,
                                         const std::vector<std::uint64_t>& seeds,
                                         CompareOptions opt = {}) {
    if (recipes.size() < 2) throw InputError("compare_strategies needs at least two recipes");
    if (seeds.empty()) throw InputError("compare_strategies needs at least one seed");
    for (const MixRecipe& r : recipes) r.validate();
    StrategyReport report;
    report.suite = suite;
    report.options = opt;
    for (const MixRecipe& r : recipes) {
        for (std::uint64_t seed : seeds) {
            report.curves.push_back(run_recipe(suite, r, seed, opt));
        }
    }
    return report;
}

inline nlohmann::ordered_json report_to_json(const StrategyReport& r) {
    nlohmann::ordered_json j;
    j["suite"] = {{"seed", r.suite.seed},
                  {"tasks", r.suite.task_names},
                  {"dim_in", InterferenceSuite::kDimIn},
                  {"rank", InterferenceSuite::kRank},
                  {"dim_out", InterferenceSuite::kDimOut},
                  {"noise", r.suite.noise}};
    j["options"] = {{"steps", r.options.steps},
                    {"batch", r.options.batch},
                    {"lr", r.options.lr},
                    {"eval_samples", r.options.eval_samples}};
    j["runs"] = nlohmann::ordered_json::array();
    for (const StrategyCurve& c : r.curves) {
        nlohmann::ordered_json run;
        run["strategy"] = c.strategy;
        run["seed"] = c.seed;
        nlohmann::ordered_json finals;
        const auto f = c.final_loss();
        for (int t = 0; t < InterferenceSuite::kTasks; ++t) finals[r.suite.task_names[t]] = f[t];
        run["final_loss"] = finals;
        j["runs"].push_back(std::move(run));
    }
    return j;
}

// Plot data: strategy, seed, step, task, loss.
inline std::string report_curves_csv(const StrategyReport& r) {
    std::ostringstream out;
    out << "strategy,seed,step,task,loss\n";
    for (const StrategyCurve& c : r.curves) {
        for (std::size_t step = 0; step < c.loss.size(); ++step) {
            for (int t = 0; t < InterferenceSuite::kTasks; ++t) {
                char buf[48];
                std::snprintf(buf, sizeof(buf), "%.8f", c.loss[step][t]);
                out << c.strategy << "," << c.seed << "," << step << "," << r.suite.task_names[t]
                    << "," << buf << "\n";
            }
        }
    }
    return out.str();
}

}  // namespace omni
