// Training harness: seeded mini-batch Adam loop with per-epoch metrics,
// model evaluation, finite-difference gradient checking, and history export.
#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "regunet/data.hpp"
#include "regunet/model.hpp"
#include "regunet/objective.hpp"
#include "regunet/optim.hpp"
#include "regunet/textio.hpp"

namespace regunet {

class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t shuffle_seed = 0;
    // When > 0, the history accumulated so far is rewritten to flush_path
    // every flush_interval epochs, so long runs can be watched from outside.
    std::size_t flush_interval = 0;
    std::string flush_path;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_penalty = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double wall_time_sec = 0.0;  // not exported: timing is not reproducible
};

struct TrainHistory {
    std::vector<EpochRecord> records;
};

namespace detail {

inline Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw std::invalid_argument("take_rows: empty index list");
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= m.rows())
            throw std::out_of_range("take_rows: index " + std::to_string(idx[r]) +
                                    " exceeds row count " + std::to_string(m.rows()));
        for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(idx[r], c);
    }
    return out;
}

} // namespace detail

struct EvalResult {
    double data_loss = 0.0;
    double accuracy = 0.0;  // percent
};

/// Mean BCE and percent accuracy (probability >= threshold counts as class 1)
/// over the given rows. The model must already be in eval mode so results do
/// not depend on how the rows are batched.
inline EvalResult evaluate(Model& model, const Dataset& ds,
                           const std::vector<std::size_t>& indices,
                           double threshold = 0.5) {
    if (model.mode != BnMode::eval)
        throw std::logic_error("evaluate: model must be in eval mode");
    if (indices.empty()) throw std::invalid_argument("evaluate: empty index list");
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("evaluate: threshold must be inside (0,1)");
    const Matrix X = detail::take_rows(ds.X, indices);
    const Matrix y = detail::take_rows(ds.y, indices);
    const Matrix p = forward(model, X);
    EvalResult result;
    result.data_loss = bce(p, y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const double label = p(i, 0) >= threshold ? 1.0 : 0.0;
        if (label == y(i, 0)) ++correct;
    }
    result.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(p.rows());
    return result;
}

inline void export_history(const TrainHistory& history, const std::string& path,
                           const std::string& format) {
    if (history.records.empty())
        throw TrainError("export_history: history is empty");
    if (format == "csv") {
        std::string text = "epoch,train_loss,train_penalty,train_acc,val_loss,val_acc\n";
        for (const EpochRecord& r : history.records) {
            text += std::to_string(r.epoch);
            text += ',';
            text += fmt_double(r.train_loss);
            text += ',';
            text += fmt_double(r.train_penalty);
            text += ',';
            text += fmt_double(r.train_acc);
            text += ',';
            text += fmt_double(r.val_loss);
            text += ',';
            text += fmt_double(r.val_acc);
            text += '\n';
        }
        atomic_write_text(path, text);
    } else if (format == "json") {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const EpochRecord& r : history.records) {
            nlohmann::ordered_json rec;
            rec["epoch"] = r.epoch;
            rec["train_loss"] = r.train_loss;
            rec["train_penalty"] = r.train_penalty;
            rec["train_acc"] = r.train_acc;
            rec["val_loss"] = r.val_loss;
            rec["val_acc"] = r.val_acc;
            arr.push_back(std::move(rec));
        }
        atomic_write_text(path, arr.dump(2) + "\n");
    } else {
        throw TrainError("export_history: unknown format '" + format + "' (want csv or json)");
    }
}

/// Mini-batch Adam over the train partition. Per epoch: shuffle (seeded),
/// step over batches (a trailing single-row batch is folded into the previous
/// one so batch statistics stay defined), then recompute train/val metrics
/// over the full partitions in eval mode. Deterministic given the seeds.
inline TrainHistory train(Model& model, const Dataset& ds, const SplitIndices& split,
                          const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw TrainError("train: epochs must be >= 1");
    if (cfg.batch_size < 2) throw TrainError("train: batch_size must be >= 2");
    if (!ds.standardization)
        throw TrainError("train: dataset must be standardized before training");
    if (ds.X.cols() != model.spec.input_dim)
        throw TrainError("train: dataset has " + std::to_string(ds.X.cols()) +
                         " features, model expects " + std::to_string(model.spec.input_dim));
    if (split.train_idx.size() < 2)
        throw TrainError("train: need at least 2 training rows");
    if (split.val_idx.empty())
        throw TrainError("train: validation partition is empty");

    std::vector<ParamRef> params = trainable_params(model);
    AdamState adam = adam_init(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    Rng shuffle_rng(cfg.shuffle_seed);

    TrainHistory history;
    history.records.reserve(cfg.epochs);
    std::vector<std::size_t> order = split.train_idx;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        set_mode(model, BnMode::train);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

        const std::size_t n = order.size();
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < n;) {
            std::size_t stop = std::min(start + cfg.batch_size, n);
            if (n - stop == 1) stop = n;  // fold a trailing single row in
            ++batch_no;
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
            try {
                const Matrix Xb = detail::take_rows(ds.X, batch);
                const Matrix yb = detail::take_rows(ds.y, batch);
                const Matrix p = forward(model, Xb);
                const double data_loss = bce(p, yb);
                if (!std::isfinite(data_loss))
                    throw NumericError("train: loss is not finite");
                backward(model, bce_grad(p, yb));
                adam_step(adam, params);
            } catch (const NumericError& e) {
                throw NumericError("train: numerical failure at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_no) + ": " + e.what());
            }
            start = stop;
        }

        set_mode(model, BnMode::eval);
        const EvalResult train_metrics = evaluate(model, ds, split.train_idx);
        const EvalResult val_metrics = evaluate(model, ds, split.val_idx);
        const auto t1 = std::chrono::steady_clock::now();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_metrics.data_loss;
        rec.train_penalty = model_penalty(model);
        rec.train_acc = train_metrics.accuracy;
        rec.val_loss = val_metrics.data_loss;
        rec.val_acc = val_metrics.accuracy;
        rec.wall_time_sec = std::chrono::duration<double>(t1 - t0).count();
        history.records.push_back(rec);

        if (cfg.flush_interval > 0 && !cfg.flush_path.empty() &&
            epoch % cfg.flush_interval == 0)
            export_history(history, cfg.flush_path, "csv");
    }
    return history;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

/// Compares analytic gradients of the total regularized loss against central
/// finite differences (h=1e-5) for every parameter entry of a tiny model.
/// Inputs are resampled until no ReLU pre-activation sits near its kink and
/// no predicted probability sits at the BCE clip boundary, so the loss is
/// smooth in the probed neighbourhood. L1-penalized weight entries with
/// |w| < 1e-3 are excluded (the penalty is not differentiable there).
/// `tamper` (test hook) mutates the model after the analytic backward pass.
inline GradCheckResult gradient_check(const ModelSpec& spec_small, std::uint64_t seed,
                                      const std::function<void(Model&)>& tamper = nullptr) {
    if (spec_small.input_dim > 5 || spec_small.hidden_width > 8 || spec_small.head_width > 8)
        throw TrainError("gradient_check: use tiny dims (input <= 5, widths <= 8)");
    constexpr std::size_t kBatch = 6;
    constexpr double kKinkMargin = 1e-3;
    constexpr double kStep = 1e-5;

    Model model = build(spec_small);
    set_mode(model, BnMode::train);
    Matrix y(kBatch, 1);
    for (std::size_t i = 0; i < kBatch; ++i) y(i, 0) = static_cast<double>(i % 2);

    // Resample X until the loss surface is smooth around the working point.
    Matrix X(kBatch, spec_small.input_dim);
    bool found = false;
    for (std::uint64_t attempt = 0; attempt < 64 && !found; ++attempt) {
        Rng data_rng(seed + 1000003ULL * attempt);
        for (std::size_t i = 0; i < X.size(); ++i) X.data()[i] = data_rng.normal();
        const Matrix p = forward(model, X);
        found = true;
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.data()[i] < 1e-6 || p.data()[i] > 1.0 - 1e-6) found = false;
        auto scan = [&found, kKinkMargin](const std::vector<LayerNode>& layers) {
            for (const LayerNode& node : layers) {
                if (node.kind != LayerKind::relu || !node.cache_input) continue;
                for (std::size_t i = 0; i < node.cache_input->size(); ++i)
                    if (std::fabs(node.cache_input->data()[i]) < kKinkMargin) found = false;
            }
        };
        for (const Branch& br : model.branches) scan(br.layers);
        scan(model.head);
    }
    if (!found)
        throw TrainError("gradient_check: could not find a smooth working point");

    // Analytic pass.
    {
        const Matrix p = forward(model, X);
        backward(model, bce_grad(p, y));
    }
    if (tamper) tamper(model);

    std::vector<ParamRef> params = trainable_params(model);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const ParamRef& ref : params) analytic.push_back(*ref.grad);

    std::set<const Matrix*> l1_weights;
    for (const WeightGroup& g : weight_groups(model))
        if (g.reg.mode == RegMode::l1)
            for (const Matrix* w : g.weights) l1_weights.insert(w);

    auto total_loss = [&model, &X, &y]() {
        const Matrix p = forward(model, X);
        return model_loss_report(model, bce(p, y)).total_loss;
    };

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& w = *params[pi].value;
        const bool l1 = l1_weights.count(params[pi].value) > 0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double orig = w.data()[k];
            if (l1 && std::fabs(orig) < 1e-3) continue;
            w.data()[k] = orig + kStep;
            const double f_plus = total_loss();
            w.data()[k] = orig - kStep;
            const double f_minus = total_loss();
            w.data()[k] = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * kStep);
            const double a = analytic[pi].data()[k];
            const double diff = std::fabs(a - numeric);
            const double rel =
                diff <= 1e-7 ? 0.0 : diff / std::max(std::fabs(a), std::fabs(numeric));
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = params[pi].name + "[" + std::to_string(k / w.cols()) + "," +
                                     std::to_string(k % w.cols()) + "]";
            }
        }
    }
    return result;
}

} // namespace regunet
