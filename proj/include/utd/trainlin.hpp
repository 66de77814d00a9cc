#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "utd/binary_io.hpp"
#include "utd/embed.hpp"
#include "utd/error.hpp"
#include "utd/json_io.hpp"

namespace utd {

/// Indices of a with-replacement resample of size n. Draws come from
/// std::mt19937_64 seeded with `seed` (a fully specified engine), mapped to
/// [0, n) by rejection so every index is equally likely.
inline std::vector<std::size_t> bootstrap_sample(std::size_t n, std::uint64_t seed) {
    require(n >= 1, "bootstrap_sample needs n >= 1");
    std::mt19937_64 engine(seed);
    const std::uint64_t bound = n;
    const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod n
    std::vector<std::size_t> out(n);
    for (auto& idx : out) {
        std::uint64_t r;
        do {
            r = engine();
        } while (r < threshold);
        idx = static_cast<std::size_t>(r % bound);
    }
    return out;
}

struct TrainConfig {
    double l2 = 1e-4;
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;
    int history = 10;  // L-BFGS memory
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

/// Multinomial logistic regression: logits = W x + b.
struct LinearModel {
    std::size_t classes = 0;
    std::size_t dim = 0;
    std::vector<float> weights;  // classes x dim, row-major
    std::vector<float> bias;     // classes
    TrainConfig config;
    double train_accuracy = 0.0;
    std::uint32_t iterations = 0;

    bool operator==(const LinearModel&) const = default;
};

/// Regularized mean cross-entropy over parameters theta = [vec(W) (column
/// major, classes x dim); b]:
///   (1/N) sum_i [logsumexp(z_i) - z_i,y_i] + (l2/2)(|W|_F^2 + |b|^2)
class SoftmaxObjective {
public:
    SoftmaxObjective(const Eigen::MatrixXd& features, const std::vector<std::size_t>& labels,
                     std::size_t classes, double l2)
        : x_(features), y_(labels), classes_(classes), l2_(l2) {}

    std::size_t parameter_count() const { return classes_ * (static_cast<std::size_t>(x_.cols()) + 1); }

    double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        const auto c = static_cast<Eigen::Index>(classes_);
        const auto d = x_.cols();
        const auto n = x_.rows();
        Eigen::Map<const Eigen::MatrixXd> w(theta.data(), c, d);
        Eigen::Map<const Eigen::VectorXd> b(theta.data() + c * d, c);

        Eigen::MatrixXd z = x_ * w.transpose();  // n x c
        z.rowwise() += b.transpose();
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto yi = static_cast<Eigen::Index>(y_[i]);
            const double zy = z(i, yi);
            const double m = z.row(i).maxCoeff();
            z.row(i).array() = (z.row(i).array() - m).exp();
            const double s = z.row(i).sum();
            loss += m + std::log(s) - zy;
            z.row(i) /= s;
            z(i, yi) -= 1.0;  // P - Y
        }
        const double inv_n = 1.0 / static_cast<double>(n);

        grad.resize(theta.size());
        Eigen::Map<Eigen::MatrixXd> gw(grad.data(), c, d);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + c * d, c);
        gw.noalias() = inv_n * (z.transpose() * x_);
        gw += l2_ * w;
        gb = inv_n * z.colwise().sum().transpose() + l2_ * b;

        return loss * inv_n + 0.5 * l2_ * theta.squaredNorm();
    }

private:
    const Eigen::MatrixXd& x_;
    const std::vector<std::size_t>& y_;
    std::size_t classes_;
    double l2_;
};

struct OptimizerTrace {
    std::vector<double> losses;  // loss after each accepted step, starting with the initial loss
};

/// L-BFGS with Armijo backtracking. Every accepted step decreases the loss.
/// Deterministic: no threading, fixed operation order.
inline Eigen::VectorXd minimize_lbfgs(const SoftmaxObjective& f, Eigen::VectorXd theta, const TrainConfig& cfg,
                                      std::uint32_t& iterations, OptimizerTrace* trace = nullptr) {
    Eigen::VectorXd g;
    double fx = f.value_and_gradient(theta, g);
    if (trace)
        trace->losses.push_back(fx);
    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;
    iterations = 0;
    Eigen::VectorXd g_new;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        if (g.norm() < cfg.gradient_tolerance)
            break;
        // Two-loop recursion for the search direction.
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * s_hist[k].dot(q);
            q -= alpha[k] * y_hist[k];
        }
        if (!s_hist.empty())
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            double beta = rho_hist[k] * y_hist[k].dot(q);
            q += (alpha[k] - beta) * s_hist[k];
        }
        Eigen::VectorXd dir = -q;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g;
            slope = -g.squaredNorm();
        }
        double step = s_hist.empty() ? std::min(1.0, 1.0 / g.norm()) : 1.0;
        bool accepted = false;
        Eigen::VectorXd next;
        double f_next = 0.0;
        for (int ls = 0; ls < 60; ++ls) {
            next = theta + step * dir;
            f_next = f.value_and_gradient(next, g_new);
            if (std::isfinite(f_next) && f_next <= fx + 1e-4 * step * slope && f_next <= fx) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;
        Eigen::VectorXd s = next - theta;
        Eigen::VectorXd y = g_new - g;
        double sy = s.dot(y);
        if (sy > 1e-12) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > cfg.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        theta = std::move(next);
        g = g_new;
        fx = f_next;
        ++iterations;
        if (trace)
            trace->losses.push_back(fx);
    }
    return theta;
}

inline std::vector<double> predict_proba(const LinearModel& model, std::span<const float> x) {
    if (x.size() != model.dim)
        fail(ErrorKind::DimensionMismatch,
             "model expects " + std::to_string(model.dim) + "-d input, got " + std::to_string(x.size()));
    std::vector<double> z(model.classes);
    for (std::size_t c = 0; c < model.classes; ++c) {
        double s = model.bias[c];
        const float* w = model.weights.data() + c * model.dim;
        for (std::size_t j = 0; j < model.dim; ++j)
            s += static_cast<double>(w[j]) * x[j];
        z[c] = s;
    }
    double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        total += v;
    }
    for (auto& v : z)
        v /= total;
    return z;
}

/// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best])
            best = i;
    return best;
}

inline std::size_t predict(const LinearModel& model, std::span<const float> x) {
    auto p = predict_proba(model, x);
    return argmax(p);
}

/// Fits W and b on rows of `features` (unit-norm embeddings). Classes that do
/// not occur keep their parameter rows, which regularization pulls to zero.
inline LinearModel train_softmax(std::span<const Embedding> features, std::span<const std::size_t> labels,
                                 std::size_t classes, const TrainConfig& cfg, OptimizerTrace* trace = nullptr) {
    if (features.size() != labels.size())
        fail(ErrorKind::DegenerateInput, "features and labels differ in length");
    if (features.empty())
        fail(ErrorKind::DegenerateInput, "no training samples");
    if (classes < 2)
        fail(ErrorKind::DegenerateInput, "need at least two classes");
    if (cfg.l2 < 0 || cfg.max_iterations < 1)
        fail(ErrorKind::Precondition, "l2 must be >= 0 and max_iterations >= 1");
    const std::size_t n = features.size(), d = features.front().size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        if (features[i].size() != d)
            fail(ErrorKind::DimensionMismatch, "feature rows differ in dimension");
        if (labels[i] >= classes)
            fail(ErrorKind::DegenerateInput, "label " + std::to_string(labels[i]) + " out of range");
        for (std::size_t j = 0; j < d; ++j) {
            if (!std::isfinite(features[i][j]))
                fail(ErrorKind::DegenerateInput, "non-finite feature", "row " + std::to_string(i));
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features[i][j];
        }
    }
    std::vector<std::size_t> y(labels.begin(), labels.end());
    SoftmaxObjective objective(x, y, classes, cfg.l2);
    LinearModel model;
    model.classes = classes;
    model.dim = d;
    model.config = cfg;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(objective.parameter_count()));
    theta = minimize_lbfgs(objective, std::move(theta), cfg, model.iterations, trace);
    if (!theta.allFinite())
        fail(ErrorKind::TrainFailure, "optimizer produced non-finite parameters");
    const auto c = static_cast<Eigen::Index>(classes);
    model.weights.resize(classes * d);
    model.bias.resize(classes);
    for (Eigen::Index k = 0; k < c; ++k) {
        for (std::size_t j = 0; j < d; ++j)
            model.weights[static_cast<std::size_t>(k) * d + j] =
                static_cast<float>(theta(static_cast<Eigen::Index>(j) * c + k));
        model.bias[static_cast<std::size_t>(k)] = static_cast<float>(theta(c * static_cast<Eigen::Index>(d) + k));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i)
        correct += predict(model, features[i]) == labels[i];
    model.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return model;
}

// ---------------------------------------------------------------------------
// Model file
//
//   "UTDM" | version u16 | classes u32 | dim u32 | seed u64 | l2 f64 |
//   max_iterations i32 | gradient_tolerance f64 | history i32 |
//   train_accuracy f64 | iterations u32 | W f32[classes*dim] | b f32[classes]

inline std::string serialize(const LinearModel& m) {
    std::string out = "UTDM";
    binary::put<std::uint16_t>(out, 1);
    binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.classes));
    binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim));
    binary::put<std::uint64_t>(out, m.config.seed);
    binary::put<double>(out, m.config.l2);
    binary::put<std::int32_t>(out, m.config.max_iterations);
    binary::put<double>(out, m.config.gradient_tolerance);
    binary::put<std::int32_t>(out, m.config.history);
    binary::put<double>(out, m.train_accuracy);
    binary::put<std::uint32_t>(out, m.iterations);
    for (float w : m.weights)
        binary::put<float>(out, w);
    for (float b : m.bias)
        binary::put<float>(out, b);
    return out;
}

inline LinearModel deserialize_model(std::string_view bytes, const std::string& origin) {
    binary::Reader r(bytes.data(), bytes.size(), origin);
    if (r.bytes(4) != "UTDM")
        fail(ErrorKind::Parse, "not a model file (bad magic)", origin);
    if (r.get<std::uint16_t>() != 1)
        fail(ErrorKind::Parse, "unsupported model file version", origin);
    LinearModel m;
    m.classes = r.get<std::uint32_t>();
    m.dim = r.get<std::uint32_t>();
    m.config.seed = r.get<std::uint64_t>();
    m.config.l2 = r.get<double>();
    m.config.max_iterations = r.get<std::int32_t>();
    m.config.gradient_tolerance = r.get<double>();
    m.config.history = r.get<std::int32_t>();
    m.train_accuracy = r.get<double>();
    m.iterations = r.get<std::uint32_t>();
    m.weights.resize(m.classes * m.dim);
    for (auto& w : m.weights)
        w = r.get<float>();
    m.bias.resize(m.classes);
    for (auto& b : m.bias)
        b = r.get<float>();
    if (r.remaining() != 0)
        fail(ErrorKind::Parse, "trailing bytes after model", origin);
    return m;
}

inline void write_model(const LinearModel& m, const std::filesystem::path& path) {
    write_file_atomic(path, serialize(m));
}

inline LinearModel load_model(const std::filesystem::path& path) {
    return deserialize_model(read_file(path), path.string());
}

} // namespace utd
