#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "icupass/cohort.hpp"
#include "icupass/common.hpp"
#include "icupass/featurize.hpp"
#include "icupass/pass.hpp"
#include "icupass/rng.hpp"

namespace icupass {
namespace rnn {

inline constexpr int kNumTargets = 3;  // hr, sbp, dbp

/// LSTM weights plus the linear output head. The stacked 4H rows of w_in /
/// w_rec / bias hold the gate blocks in the fixed order (input i, forget f,
/// cell candidate g, output o).
struct LstmParams {
    int input_size = 0;
    int hidden_size = 0;
    Eigen::MatrixXd w_in;   // 4H x D
    Eigen::MatrixXd w_rec;  // 4H x H
    Eigen::VectorXd bias;   // 4H
    Eigen::MatrixXd w_out;  // 3 x H
    Eigen::VectorXd b_out;  // 3

    static LstmParams zeros(int input_size, int hidden_size) {
        LstmParams p;
        p.input_size = input_size;
        p.hidden_size = hidden_size;
        p.w_in = Eigen::MatrixXd::Zero(4 * hidden_size, input_size);
        p.w_rec = Eigen::MatrixXd::Zero(4 * hidden_size, hidden_size);
        p.bias = Eigen::VectorXd::Zero(4 * hidden_size);
        p.w_out = Eigen::MatrixXd::Zero(kNumTargets, hidden_size);
        p.b_out = Eigen::VectorXd::Zero(kNumTargets);
        return p;
    }

    /// Uniform +-1/sqrt(H) weights; zero biases except the forget-gate
    /// block, which starts at 1.0.
    static LstmParams init(int input_size, int hidden_size, std::uint64_t seed) {
        LstmParams p = zeros(input_size, hidden_size);
        Rng rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
        auto fill = [&](Eigen::MatrixXd& m) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
            }
        };
        fill(p.w_in);
        fill(p.w_rec);
        fill(p.w_out);
        p.bias.segment(hidden_size, hidden_size).setConstant(1.0);
        return p;
    }
};

template <class Params, class Fn>
void for_each_param_array(Params& p, Fn&& fn) {
    fn(p.w_in);
    fn(p.w_rec);
    fn(p.bias);
    fn(p.w_out);
    fn(p.b_out);
}

inline double global_norm(const LstmParams& g) {
    double ss = 0.0;
    for_each_param_array(g, [&](const auto& a) { ss += a.squaredNorm(); });
    return std::sqrt(ss);
}

/// Scales gradients in place so their global norm is at most clip_norm.
inline void clip_gradients(LstmParams& g, double clip_norm) {
    const double norm = global_norm(g);
    if (norm > clip_norm && norm > 0.0) {
        const double scale = clip_norm / norm;
        for_each_param_array(g, [&](auto& a) { a *= scale; });
    }
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Post-activation gate values, enough to rebuild every local derivative
/// during backpropagation through time.
struct CellCache {
    Eigen::VectorXd i, f, g, o;
    Eigen::VectorXd c;       // new cell state
    Eigen::VectorXd tanh_c;
};

struct CellState {
    Eigen::VectorXd h, c;
};

/// One LSTM step: i,f,o = logistic gates, g = tanh candidate,
/// c = f*c_prev + i*g, h = o*tanh(c).
inline CellState cell_forward(const LstmParams& p, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev,
                              CellCache* cache = nullptr) {
    if (x.size() != p.input_size || h_prev.size() != p.hidden_size || c_prev.size() != p.hidden_size) {
        throw std::runtime_error("cell_forward: dimension mismatch");
    }
    if (!x.allFinite() || !h_prev.allFinite() || !c_prev.allFinite()) {
        throw std::runtime_error("cell_forward: non-finite input");
    }
    const int h = p.hidden_size;
    Eigen::VectorXd z = p.w_in * x + p.w_rec * h_prev + p.bias;
    Eigen::VectorXd gi = z.segment(0, h).unaryExpr([](double v) { return detail::sigmoid(v); });
    Eigen::VectorXd gf = z.segment(h, h).unaryExpr([](double v) { return detail::sigmoid(v); });
    Eigen::VectorXd gg = z.segment(2 * h, h).array().tanh();
    Eigen::VectorXd go = z.segment(3 * h, h).unaryExpr([](double v) { return detail::sigmoid(v); });

    CellState s;
    s.c = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
    Eigen::VectorXd tanh_c = s.c.array().tanh();
    s.h = go.cwiseProduct(tanh_c);
    if (cache) {
        cache->i = std::move(gi);
        cache->f = std::move(gf);
        cache->g = std::move(gg);
        cache->o = std::move(go);
        cache->c = s.c;
        cache->tanh_c = std::move(tanh_c);
    }
    return s;
}

/// Runs the cell over the matrix columns in time order from zero state and
/// emits the output head at every step (standardized target space).
inline Eigen::MatrixXd sequence_forward(const LstmParams& p, const FeatureMatrix& m) {
    if (m.n_variables() != p.input_size) {
        throw std::runtime_error("sequence_forward: matrix has " + std::to_string(m.n_variables()) +
                                 " variables, model expects " + std::to_string(p.input_size));
    }
    Eigen::MatrixXd out(m.n_steps(), kNumTargets);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(p.hidden_size);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(p.hidden_size);
    for (Eigen::Index t = 0; t < m.n_steps(); ++t) {
        CellState s = cell_forward(p, m.values.col(t), h, c);
        h = std::move(s.h);
        c = std::move(s.c);
        out.row(t) = (p.w_out * h + p.b_out).transpose();
    }
    return out;
}

/// A minibatch of variable-length sequences with per-sequence loss windows
/// (steps [0, loss_end)) and time-constant standardized targets.
struct SequenceBatch {
    std::vector<Eigen::MatrixXd> inputs;  // each D x T_b
    std::vector<int> loss_end;            // 1 <= loss_end_b <= T_b
    Eigen::MatrixXd targets;              // 3 x B

    std::size_t size() const { return inputs.size(); }

    void validate(int input_size) const {
        if (inputs.empty()) throw std::runtime_error("empty batch");
        if (loss_end.size() != inputs.size() || targets.cols() != static_cast<Eigen::Index>(inputs.size())) {
            throw std::runtime_error("batch fields disagree on size");
        }
        for (std::size_t b = 0; b < inputs.size(); ++b) {
            if (inputs[b].rows() != input_size) throw std::runtime_error("batch input dimension mismatch");
            if (inputs[b].cols() < 1) throw std::runtime_error("batch sequence must have at least 1 step");
            if (loss_end[b] < 1 || loss_end[b] > inputs[b].cols()) {
                throw std::runtime_error("loss window end out of range");
            }
        }
    }
};

namespace detail {

/// Shared batched forward pass. Sequences are zero-padded to the longest
/// length; padded steps are excluded from the loss, and because their
/// output-side gradient is exactly zero they contribute nothing to any
/// parameter gradient either.
struct BatchForward {
    Eigen::Index t_max = 0;
    std::vector<Eigen::MatrixXd> x, gi, gf, gg, go, c, tanh_c, h;  // per step, H x B (x: D x B)
    std::vector<Eigen::MatrixXd> y;                                // per step, 3 x B
    double loss = 0.0;
};

inline BatchForward batch_forward(const LstmParams& p, const SequenceBatch& batch, bool keep_caches) {
    batch.validate(p.input_size);
    const auto bsz = static_cast<Eigen::Index>(batch.size());
    const int hs = p.hidden_size;

    BatchForward fw;
    for (const auto& m : batch.inputs) fw.t_max = std::max(fw.t_max, m.cols());

    // per-sequence loss weight: mean over sequences of per-sequence means
    // over window steps and the 3 targets
    std::vector<double> weight(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        weight[b] = 1.0 / (static_cast<double>(batch.size()) * 3.0 * batch.loss_end[b]);
    }

    Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(hs, bsz);
    Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(hs, bsz);
    if (keep_caches) {
        fw.x.reserve(fw.t_max);
        fw.gi.reserve(fw.t_max);
    }

    for (Eigen::Index t = 0; t < fw.t_max; ++t) {
        Eigen::MatrixXd xt = Eigen::MatrixXd::Zero(p.input_size, bsz);
        for (Eigen::Index b = 0; b < bsz; ++b) {
            const auto& m = batch.inputs[static_cast<std::size_t>(b)];
            if (t < m.cols()) xt.col(b) = m.col(t);
        }
        Eigen::MatrixXd z = ((p.w_in * xt + p.w_rec * h_prev).colwise() + p.bias).eval();
        Eigen::MatrixXd gi = z.middleRows(0, hs).unaryExpr([](double v) { return sigmoid(v); });
        Eigen::MatrixXd gf = z.middleRows(hs, hs).unaryExpr([](double v) { return sigmoid(v); });
        Eigen::MatrixXd gg = z.middleRows(2 * hs, hs).array().tanh();
        Eigen::MatrixXd go = z.middleRows(3 * hs, hs).unaryExpr([](double v) { return sigmoid(v); });
        Eigen::MatrixXd ct = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
        Eigen::MatrixXd tct = ct.array().tanh();
        Eigen::MatrixXd ht = go.cwiseProduct(tct);
        Eigen::MatrixXd yt = (p.w_out * ht).colwise() + p.b_out;

        for (Eigen::Index b = 0; b < bsz; ++b) {
            if (t < batch.loss_end[static_cast<std::size_t>(b)]) {
                const Eigen::VectorXd err = yt.col(b) - batch.targets.col(b);
                fw.loss += weight[static_cast<std::size_t>(b)] * err.squaredNorm();
            }
        }

        if (keep_caches) {
            fw.x.push_back(std::move(xt));
            fw.gi.push_back(std::move(gi));
            fw.gf.push_back(std::move(gf));
            fw.gg.push_back(std::move(gg));
            fw.go.push_back(std::move(go));
            fw.c.push_back(ct);
            fw.tanh_c.push_back(std::move(tct));
            fw.h.push_back(ht);
            fw.y.push_back(std::move(yt));
        }
        h_prev = std::move(ht);
        c_prev = std::move(ct);
    }
    return fw;
}

}  // namespace detail

/// Mean squared error over each sequence's loss window (forward only).
inline double batch_loss(const LstmParams& p, const SequenceBatch& batch) {
    return detail::batch_forward(p, batch, /*keep_caches=*/false).loss;
}

/// Loss plus gradients for every parameter via backpropagation through
/// time over exactly the forward graph.
inline std::pair<double, LstmParams> loss_and_gradients(const LstmParams& p,
                                                        const SequenceBatch& batch) {
    detail::BatchForward fw = detail::batch_forward(p, batch, /*keep_caches=*/true);
    const auto bsz = static_cast<Eigen::Index>(batch.size());
    const int hs = p.hidden_size;

    LstmParams g = LstmParams::zeros(p.input_size, p.hidden_size);
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(hs, bsz);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(hs, bsz);

    for (Eigen::Index t = fw.t_max - 1; t >= 0; --t) {
        // d loss / d y_t, zero outside each sequence's loss window
        Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(kNumTargets, bsz);
        for (Eigen::Index b = 0; b < bsz; ++b) {
            const auto bi = static_cast<std::size_t>(b);
            if (t < batch.loss_end[bi]) {
                const double w = 2.0 / (static_cast<double>(bsz) * 3.0 * batch.loss_end[bi]);
                dy.col(b) = w * (fw.y[static_cast<std::size_t>(t)].col(b) - batch.targets.col(b));
            }
        }
        const auto ti = static_cast<std::size_t>(t);
        const Eigen::MatrixXd& ht = fw.h[ti];
        g.w_out.noalias() += dy * ht.transpose();
        g.b_out += dy.rowwise().sum();

        Eigen::MatrixXd dh = p.w_out.transpose() * dy + dh_next;
        Eigen::MatrixXd dc =
            dc_next + dh.cwiseProduct(fw.go[ti]).cwiseProduct(
                          (1.0 - fw.tanh_c[ti].array().square()).matrix());

        const Eigen::MatrixXd c_prev =
            t == 0 ? Eigen::MatrixXd::Zero(hs, bsz) : fw.c[ti - 1];
        const Eigen::MatrixXd h_prev =
            t == 0 ? Eigen::MatrixXd::Zero(hs, bsz) : fw.h[ti - 1];

        Eigen::MatrixXd dz(4 * hs, bsz);
        dz.middleRows(0, hs) = dc.cwiseProduct(fw.gg[ti])
                                   .cwiseProduct(fw.gi[ti])
                                   .cwiseProduct((1.0 - fw.gi[ti].array()).matrix());
        dz.middleRows(hs, hs) = dc.cwiseProduct(c_prev)
                                    .cwiseProduct(fw.gf[ti])
                                    .cwiseProduct((1.0 - fw.gf[ti].array()).matrix());
        dz.middleRows(2 * hs, hs) =
            dc.cwiseProduct(fw.gi[ti]).cwiseProduct((1.0 - fw.gg[ti].array().square()).matrix());
        dz.middleRows(3 * hs, hs) = dh.cwiseProduct(fw.tanh_c[ti])
                                        .cwiseProduct(fw.go[ti])
                                        .cwiseProduct((1.0 - fw.go[ti].array()).matrix());

        g.w_in.noalias() += dz * fw.x[ti].transpose();
        g.w_rec.noalias() += dz * h_prev.transpose();
        g.bias += dz.rowwise().sum();

        dh_next.noalias() = p.w_rec.transpose() * dz;
        dc_next = dc.cwiseProduct(fw.gf[ti]);
    }
    return {fw.loss, std::move(g)};
}

// ---------------------------------------------------------------------------
// Training

enum class Regime { pmd, h12 };

inline const char* regime_name(Regime r) { return r == Regime::pmd ? "pmd" : "h12"; }

inline Regime regime_from_name(std::string_view s) {
    if (s == "pmd") return Regime::pmd;
    if (s == "h12") return Regime::h12;
    throw std::runtime_error("unknown training regime: '" + std::string(s) + "'");
}

struct TrainConfig {
    Regime regime = Regime::pmd;
    int hidden_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int max_epochs = 200;
    int patience = 10;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

/// Per-vital standardization of the regression targets so all three
/// contribute comparably to the loss.
struct TargetStats {
    std::array<double, 3> mean = {0.0, 0.0, 0.0};
    std::array<double, 3> stddev = {1.0, 1.0, 1.0};

    Eigen::Vector3d standardize(const std::array<double, 3>& raw) const {
        Eigen::Vector3d out;
        for (int v = 0; v < 3; ++v) out(v) = (raw[static_cast<std::size_t>(v)] - mean[static_cast<std::size_t>(v)]) / stddev[static_cast<std::size_t>(v)];
        return out;
    }
    std::array<double, 3> unstandardize(const Eigen::Vector3d& std_space) const {
        std::array<double, 3> out;
        for (std::size_t v = 0; v < 3; ++v) out[v] = std_space(static_cast<Eigen::Index>(v)) * stddev[v] + mean[v];
        return out;
    }
};

inline TargetStats fit_target_stats(const std::vector<PassTargets>& targets) {
    if (targets.empty()) throw std::runtime_error("fit_target_stats: no targets");
    TargetStats ts;
    for (std::size_t v = 0; v < 3; ++v) {
        double sum = 0.0;
        for (const PassTargets& t : targets) sum += t.mu[v];
        ts.mean[v] = sum / static_cast<double>(targets.size());
        double ss = 0.0;
        for (const PassTargets& t : targets) ss += (t.mu[v] - ts.mean[v]) * (t.mu[v] - ts.mean[v]);
        ts.stddev[v] = std::sqrt(ss / static_cast<double>(targets.size()));
        if (!(ts.stddev[v] > 0.0)) ts.stddev[v] = 1.0;  // degenerate constant target
    }
    return ts;
}

struct EpochTrace {
    int epoch = 0;
    double train_loss = 0.0;     // mean minibatch loss
    double val_rmse_raw = 0.0;   // mean of per-vital 12th-hour rMSEs
};

/// Trained artifact: weights, both standardizations, config and the
/// validation trace that selected the kept epoch.
struct LstmModel {
    LstmParams params;
    Regime regime = Regime::pmd;
    double grid_step_hr = 1.0;
    NormStats input_stats;
    TargetStats target_stats;
    TrainConfig config;
    std::vector<EpochTrace> trace;
    int best_epoch = -1;
};

inline constexpr double kPredictionHour = 12.0;

namespace detail {

/// Column index of the 12th-hour grid point; the grid must contain it.
inline Eigen::Index prediction_column(double grid_step_hr) {
    const double k = kPredictionHour / grid_step_hr;
    const auto idx = static_cast<Eigen::Index>(std::llround(k));
    if (std::abs(k - static_cast<double>(idx)) > 1e-9) {
        throw std::runtime_error("grid step does not place a point at hour 12");
    }
    return idx;
}

}  // namespace detail

/// 12th-hour prediction in raw units: featurize through hour 12, run the
/// sequence, read the row at the hour-12 column and un-standardize.
inline std::array<double, 3> predict_at_12h(const LstmModel& model, const Episode& episode,
                                            const NormStats& stats) {
    FeatureMatrix m = build_matrix(episode, kPredictionHour, model.grid_step_hr, stats);
    Eigen::MatrixXd preds = sequence_forward(model.params, m);
    const Eigen::Index col = detail::prediction_column(model.grid_step_hr);
    if (col >= preds.rows()) throw std::runtime_error("sequence too short for 12th-hour prediction");
    return model.target_stats.unstandardize(preds.row(col).transpose());
}

/// Episode paired with its acceptable-state targets.
struct TrainExample {
    const Episode* episode = nullptr;
    PassTargets targets;
};

inline LstmModel train(const std::vector<TrainExample>& train_set,
                       const std::vector<TrainExample>& val_set, const NormStats& stats,
                       const TrainConfig& config, double grid_step_hr = 1.0) {
    if (train_set.empty() || val_set.empty()) {
        throw std::runtime_error("rnn::train: train and validation sets must be non-empty");
    }

    std::vector<PassTargets> train_targets;
    train_targets.reserve(train_set.size());
    for (const TrainExample& ex : train_set) train_targets.push_back(ex.targets);
    const TargetStats target_stats = fit_target_stats(train_targets);

    // featurize once: inputs end at medical discharge (pmd) or hour 12
    // (h12); the loss window covers the whole featurized sequence either
    // way, which is what the regimes differ on
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<int> loss_end;
    Eigen::MatrixXd targets(3, static_cast<Eigen::Index>(train_set.size()));
    inputs.reserve(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        const Episode& ep = *train_set[i].episode;
        const double end_hr =
            config.regime == Regime::pmd ? ep.medical_discharge_hr : std::min(kPredictionHour, ep.medical_discharge_hr);
        FeatureMatrix m = build_matrix(ep, end_hr, grid_step_hr, stats);
        loss_end.push_back(static_cast<int>(m.n_steps()));
        inputs.push_back(std::move(m.values));
        targets.col(static_cast<Eigen::Index>(i)) = target_stats.standardize(train_set[i].targets.mu);
    }

    std::vector<FeatureMatrix> val_inputs;
    val_inputs.reserve(val_set.size());
    for (const TrainExample& ex : val_set) {
        val_inputs.push_back(build_matrix(*ex.episode, kPredictionHour, grid_step_hr, stats));
    }
    const Eigen::Index pred_col = detail::prediction_column(grid_step_hr);

    const int input_size = static_cast<int>(stats.size());
    LstmParams params = LstmParams::init(input_size, config.hidden_size, derive_seed(config.seed, 1));
    LstmParams m1 = LstmParams::zeros(input_size, config.hidden_size);
    LstmParams m2 = LstmParams::zeros(input_size, config.hidden_size);
    long long adam_step = 0;

    auto validation_score = [&](const LstmParams& p) {
        std::array<double, 3> se = {0.0, 0.0, 0.0};
        for (std::size_t i = 0; i < val_set.size(); ++i) {
            Eigen::MatrixXd preds = sequence_forward(p, val_inputs[i]);
            const std::array<double, 3> raw =
                target_stats.unstandardize(preds.row(pred_col).transpose());
            for (std::size_t v = 0; v < 3; ++v) {
                const double err = raw[v] - val_set[i].targets.mu[v];
                se[v] += err * err;
            }
        }
        double score = 0.0;
        for (std::size_t v = 0; v < 3; ++v) {
            score += std::sqrt(se[v] / static_cast<double>(val_set.size())) / 3.0;
        }
        return score;
    };

    LstmModel model;
    model.regime = config.regime;
    model.grid_step_hr = grid_step_hr;
    model.input_stats = stats;
    model.target_stats = target_stats;
    model.config = config;

    Rng shuffle_rng(derive_seed(config.seed, 2));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    double best_score = std::numeric_limits<double>::infinity();
    LstmParams best_params = params;
    int best_epoch = -1;
    int epochs_since_improvement = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int batch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            SequenceBatch batch;
            batch.targets.resize(3, static_cast<Eigen::Index>(stop - start));
            for (std::size_t i = start; i < stop; ++i) {
                batch.inputs.push_back(inputs[order[i]]);
                batch.loss_end.push_back(loss_end[order[i]]);
                batch.targets.col(static_cast<Eigen::Index>(i - start)) =
                    targets.col(static_cast<Eigen::Index>(order[i]));
            }

            auto [loss, grads] = loss_and_gradients(params, batch);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("rnn::train diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " + std::to_string(batch_count));
            }
            loss_sum += loss;
            ++batch_count;

            clip_gradients(grads, config.clip_norm);
            ++adam_step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam_step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam_step));
            auto update = [&](Eigen::MatrixXd& theta, const Eigen::MatrixXd& grad, Eigen::MatrixXd& m,
                              Eigen::MatrixXd& v) {
                m = config.beta1 * m + (1.0 - config.beta1) * grad;
                v = (config.beta2 * v.array() + (1.0 - config.beta2) * grad.array().square()).matrix();
                theta.array() -=
                    config.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon);
            };
            auto update_vec = [&](Eigen::VectorXd& theta, const Eigen::VectorXd& grad, Eigen::VectorXd& m,
                                  Eigen::VectorXd& v) {
                m = config.beta1 * m + (1.0 - config.beta1) * grad;
                v = (config.beta2 * v.array() + (1.0 - config.beta2) * grad.array().square()).matrix();
                theta.array() -=
                    config.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon);
            };
            update(params.w_in, grads.w_in, m1.w_in, m2.w_in);
            update(params.w_rec, grads.w_rec, m1.w_rec, m2.w_rec);
            update_vec(params.bias, grads.bias, m1.bias, m2.bias);
            update(params.w_out, grads.w_out, m1.w_out, m2.w_out);
            update_vec(params.b_out, grads.b_out, m1.b_out, m2.b_out);
        }

        const double score = validation_score(params);
        model.trace.push_back({epoch, loss_sum / std::max(1, batch_count), score});
        if (score < best_score) {
            best_score = score;
            best_params = params;
            best_epoch = epoch;
            epochs_since_improvement = 0;
        } else if (++epochs_since_improvement >= config.patience) {
            break;
        }
    }

    model.params = std::move(best_params);
    model.best_epoch = best_epoch;
    return model;
}

struct GridPoint {
    int hidden_size = 64;
    double learning_rate = 1e-3;
};

inline std::vector<GridPoint> default_grid() {
    return {{32, 1e-3}, {64, 1e-3}, {128, 1e-3}, {32, 3e-4}, {64, 3e-4}, {128, 3e-4}};
}

/// Trains one model per grid point and keeps the one with the best
/// validation score (ties break toward the earlier grid point).
inline LstmModel grid_search(const std::vector<TrainExample>& train_set,
                             const std::vector<TrainExample>& val_set, const NormStats& stats,
                             const TrainConfig& base_config, const std::vector<GridPoint>& grid,
                             double grid_step_hr = 1.0) {
    if (grid.empty()) throw std::runtime_error("grid_search: empty grid");
    LstmModel best;
    double best_score = std::numeric_limits<double>::infinity();
    for (const GridPoint& point : grid) {
        TrainConfig config = base_config;
        config.hidden_size = point.hidden_size;
        config.learning_rate = point.learning_rate;
        LstmModel model = train(train_set, val_set, stats, config, grid_step_hr);
        double score = std::numeric_limits<double>::infinity();
        for (const EpochTrace& t : model.trace) score = std::min(score, t.val_rmse_raw);
        if (score < best_score) {
            best_score = score;
            best = std::move(model);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Artifact persistence

namespace detail {

inline ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const ordered_json& j, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    if (static_cast<Eigen::Index>(j.size()) != rows) throw std::runtime_error("weight row count mismatch");
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != cols) throw std::runtime_error("weight column count mismatch");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline ordered_json vector_to_json(const Eigen::VectorXd& v) {
    ordered_json arr = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline Eigen::VectorXd vector_from_json(const ordered_json& j, Eigen::Index n) {
    if (static_cast<Eigen::Index>(j.size()) != n) throw std::runtime_error("weight vector size mismatch");
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

}  // namespace detail

inline void save_lstm_model(const LstmModel& model, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    j["kind"] = "lstm_sequence_regressor";
    j["regime"] = regime_name(model.regime);
    j["grid_step_hr"] = model.grid_step_hr;
    j["input_size"] = model.params.input_size;
    j["hidden_size"] = model.params.hidden_size;
    ordered_json w;
    w["w_in"] = detail::matrix_to_json(model.params.w_in);
    w["w_rec"] = detail::matrix_to_json(model.params.w_rec);
    w["bias"] = detail::vector_to_json(model.params.bias);
    w["w_out"] = detail::matrix_to_json(model.params.w_out);
    w["b_out"] = detail::vector_to_json(model.params.b_out);
    j["weights"] = std::move(w);

    ordered_json in_stats = ordered_json::array();
    for (const VariableStats& vs : model.input_stats.vars) {
        ordered_json v;
        v["id"] = vs.id;
        v["mean"] = vs.mean;
        v["stddev"] = vs.stddev;
        v["median"] = vs.median;
        v["zero_variance"] = vs.zero_variance;
        v["observed_in_train"] = vs.observed_in_train;
        in_stats.push_back(std::move(v));
    }
    j["input_stats"] = std::move(in_stats);
    j["target_stats"] = {{"mean", model.target_stats.mean}, {"stddev", model.target_stats.stddev}};

    ordered_json cfg;
    cfg["regime"] = regime_name(model.config.regime);
    cfg["hidden_size"] = model.config.hidden_size;
    cfg["learning_rate"] = model.config.learning_rate;
    cfg["beta1"] = model.config.beta1;
    cfg["beta2"] = model.config.beta2;
    cfg["epsilon"] = model.config.epsilon;
    cfg["batch_size"] = model.config.batch_size;
    cfg["max_epochs"] = model.config.max_epochs;
    cfg["patience"] = model.config.patience;
    cfg["clip_norm"] = model.config.clip_norm;
    cfg["seed"] = model.config.seed;
    j["train_config"] = std::move(cfg);

    ordered_json trace = ordered_json::array();
    for (const EpochTrace& t : model.trace) {
        trace.push_back({{"epoch", t.epoch}, {"train_loss", t.train_loss}, {"val_rmse_raw", t.val_rmse_raw}});
    }
    j["validation_trace"] = std::move(trace);
    j["best_epoch"] = model.best_epoch;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

inline LstmModel load_lstm_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    ordered_json j = ordered_json::parse(in);
    if (j.at("kind").get<std::string>() != "lstm_sequence_regressor") {
        throw std::runtime_error(path + ": not an LSTM model artifact");
    }
    LstmModel model;
    model.regime = regime_from_name(j.at("regime").get<std::string>());
    model.grid_step_hr = j.at("grid_step_hr").get<double>();
    const int d = j.at("input_size").get<int>();
    const int h = j.at("hidden_size").get<int>();
    model.params = LstmParams::zeros(d, h);
    const auto& w = j.at("weights");
    model.params.w_in = detail::matrix_from_json(w.at("w_in"), 4 * h, d);
    model.params.w_rec = detail::matrix_from_json(w.at("w_rec"), 4 * h, h);
    model.params.bias = detail::vector_from_json(w.at("bias"), 4 * h);
    model.params.w_out = detail::matrix_from_json(w.at("w_out"), kNumTargets, h);
    model.params.b_out = detail::vector_from_json(w.at("b_out"), kNumTargets);

    for (const auto& v : j.at("input_stats")) {
        VariableStats vs;
        vs.id = v.at("id").get<std::string>();
        vs.mean = v.at("mean").get<double>();
        vs.stddev = v.at("stddev").get<double>();
        vs.median = v.at("median").get<double>();
        vs.zero_variance = v.at("zero_variance").get<bool>();
        vs.observed_in_train = v.at("observed_in_train").get<bool>();
        model.input_stats.vars.push_back(std::move(vs));
    }
    const auto& ts = j.at("target_stats");
    model.target_stats.mean = ts.at("mean").get<std::array<double, 3>>();
    model.target_stats.stddev = ts.at("stddev").get<std::array<double, 3>>();

    const auto& cfg = j.at("train_config");
    model.config.regime = regime_from_name(cfg.at("regime").get<std::string>());
    model.config.hidden_size = cfg.at("hidden_size").get<int>();
    model.config.learning_rate = cfg.at("learning_rate").get<double>();
    model.config.beta1 = cfg.at("beta1").get<double>();
    model.config.beta2 = cfg.at("beta2").get<double>();
    model.config.epsilon = cfg.at("epsilon").get<double>();
    model.config.batch_size = cfg.at("batch_size").get<int>();
    model.config.max_epochs = cfg.at("max_epochs").get<int>();
    model.config.patience = cfg.at("patience").get<int>();
    model.config.clip_norm = cfg.at("clip_norm").get<double>();
    model.config.seed = cfg.at("seed").get<std::uint64_t>();

    for (const auto& t : j.at("validation_trace")) {
        model.trace.push_back({t.at("epoch").get<int>(), t.at("train_loss").get<double>(),
                               t.at("val_rmse_raw").get<double>()});
    }
    model.best_epoch = j.at("best_epoch").get<int>();
    return model;
}

}  // namespace rnn
}  // namespace icupass
