#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bcosgnn/error.hpp"
#include "bcosgnn/eval.hpp"
#include "bcosgnn/explain.hpp"
#include "bcosgnn/graph.hpp"
#include "bcosgnn/json_io.hpp"
#include "bcosgnn/model.hpp"
#include "bcosgnn/parallel.hpp"

namespace bcosgnn {

struct TrainConfig {
    double lr = 1e-3;
    double lr_decay = 0.5;
    std::size_t plateau_patience = 25;
    double min_lr = 1e-6;
    std::size_t stop_patience = 25;
    std::size_t max_epochs = 300;
    std::size_t batch_size = 64;
    LossKind loss = LossKind::sigmoid;
    std::vector<std::uint64_t> seeds{0};

    void validate() const {
        detail::require(lr > 0.0, "train: lr must be positive");
        detail::require(lr_decay > 0.0 && lr_decay < 1.0, "train: lr_decay must be in (0, 1)");
        detail::require(min_lr > 0.0 && min_lr <= lr, "train: min_lr must be in (0, lr]");
        detail::require(batch_size >= 1, "train: batch_size must be >= 1");
        detail::require(!seeds.empty(), "train: at least one seed is required");
    }
};

inline ojson train_config_to_json(const TrainConfig& c) {
    ojson j;
    j["lr"] = c.lr;
    j["lr_decay"] = c.lr_decay;
    j["plateau_patience"] = c.plateau_patience;
    j["min_lr"] = c.min_lr;
    j["stop_patience"] = c.stop_patience;
    j["max_epochs"] = c.max_epochs;
    j["batch_size"] = c.batch_size;
    j["loss"] = to_string(c.loss);
    j["seeds"] = c.seeds;
    return j;
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Matrix> m, v;

    static AdamState for_parameters(std::span<const Matrix* const> params) {
        AdamState s;
        for (const Matrix* p : params) {
            s.m.emplace_back(p->rows(), p->cols());
            s.v.emplace_back(p->rows(), p->cols());
        }
        return s;
    }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(AdamState& s, std::span<Matrix* const> params, std::span<const Matrix> grads, double lr) {
    if (params.size() != grads.size() || params.size() != s.m.size())
        throw ContractViolation("adam_step: parameter/gradient/state count mismatch");
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& p = *params[k];
        if (!p.same_shape(grads[k]) || !p.same_shape(s.m[k]))
            throw ContractViolation("adam_step: shape mismatch in parameter " + std::to_string(k));
        auto& pd = p.data();
        const auto& gd = grads[k].data();
        auto& md = s.m[k].data();
        auto& vd = s.v[k].data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            md[i] = s.beta1 * md[i] + (1.0 - s.beta1) * gd[i];
            vd[i] = s.beta2 * vd[i] + (1.0 - s.beta2) * gd[i] * gd[i];
            pd[i] -= lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + s.eps);
        }
    }
}

/// Multiplies the rate by `factor` after `patience` epochs without improvement.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr)
        : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {}

    double lr() const noexcept { return lr_; }

    void step(bool improved) {
        if (improved) {
            bad_ = 0;
            return;
        }
        if (++bad_ >= patience_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            bad_ = 0;
        }
    }

private:
    double lr_, factor_;
    std::size_t patience_;
    double min_lr_;
    std::size_t bad_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

inline std::string history_csv(std::span<const EpochRecord> h) {
    std::string out = "epoch,train_loss,val_f1,lr\n";
    char buf[128];
    for (const auto& r : h) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_f1, r.lr);
        out += buf;
    }
    return out;
}

struct Predictions {
    std::vector<std::size_t> classes;
    std::vector<Vector> logits;
    double loss = 0.0;
};

inline Predictions predict(const GnnModel& m, const Dataset& d, LossKind kind = LossKind::sigmoid,
                           std::size_t chunk = 256) {
    Predictions p;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < d.size(); start += chunk) {
        const std::size_t end = std::min(d.size(), start + chunk);
        std::vector<const AttributedGraph*> ptrs;
        std::vector<std::size_t> labels;
        for (std::size_t i = start; i < end; ++i) {
            ptrs.push_back(&d.graphs[i]);
            labels.push_back(d.graphs[i].label);
        }
        const ForwardTrace tr = gin_forward_batch(m, make_batch(ptrs));
        loss_sum += classification_loss(kind, tr.logits, labels).loss * static_cast<double>(end - start);
        for (std::size_t r = 0; r < tr.logits.rows(); ++r) {
            p.logits.emplace_back(tr.logits.row(r).begin(), tr.logits.row(r).end());
            p.classes.push_back(argmax(tr.logits.row(r)));
        }
    }
    p.loss = d.empty() ? 0.0 : loss_sum / static_cast<double>(d.size());
    return p;
}

inline std::vector<std::size_t> labels_of(const Dataset& d) {
    std::vector<std::size_t> out;
    for (const auto& g : d.graphs) out.push_back(g.label);
    return out;
}

struct FitResult {
    GnnModel model;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Mini-batch training on cfg.loss. Patience and LR decay count epochs without a strict gain in
/// validation macro-F1. The returned weights are the best by (val F1, then lower val loss).
inline FitResult fit(GnnModel model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                     std::uint64_t seed) {
    cfg.validate();
    if (train.empty() || val.empty()) throw ContractViolation("fit: empty train or validation set");
    FitResult res{model, {}, 0, 0.0, std::numeric_limits<double>::infinity()};
    if (cfg.max_epochs == 0) return res;

    Rng rng(seed);
    AdamState adam = AdamState::for_parameters(std::as_const(model).parameters());
    PlateauScheduler sched(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.min_lr);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::vector<std::size_t> val_labels = labels_of(val);
    std::size_t since_best = 0;
    bool have_best = false;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const AttributedGraph*> ptrs;
            std::vector<std::size_t> labels;
            for (std::size_t i = start; i < end; ++i) {
                ptrs.push_back(&train.graphs[order[i]]);
                labels.push_back(train.graphs[order[i]].label);
            }
            const ForwardTrace tr = gin_forward_batch(model, make_batch(ptrs), {true, &rng});
            const LossResult loss = classification_loss(cfg.loss, tr.logits, labels);
            loss_sum += loss.loss * static_cast<double>(end - start);
            const ModelGradients grads = gin_backward(model, tr, loss.grad_logits);
            adam_step(adam, model.parameters(), grads.params, sched.lr());
            model.check_weight_rows();
        }
        const Predictions vp = predict(model, val, cfg.loss);
        const double f1 = classification_metrics(vp.classes, val_labels, val.num_classes).macro_f1;
        res.history.push_back({epoch, loss_sum / static_cast<double>(train.size()), f1, vp.loss, sched.lr()});

        const bool improved = !have_best || f1 > res.best_val_f1;
        if (improved || (f1 == res.best_val_f1 && vp.loss < res.best_val_loss)) {
            have_best = true;
            res.best_epoch = epoch;
            res.best_val_f1 = f1;
            res.best_val_loss = vp.loss;
            res.model = model;
        }
        if (improved) {
            since_best = 0;
        } else if (++since_best > cfg.stop_patience) {
            break;
        }
        sched.step(improved);
    }
    return res;
}

// ---------------------------------------------------------------------------------------------

struct ExplainOptions {
    ExplainMethod method = ExplainMethod::bcos;
    std::size_t ig_steps = kDefaultIgSteps;
    bool only_correct = false;
    ExplainLimits limits;
};

struct ScoredGraph {
    NodeScores scores;
    std::size_t predicted_class = 0;
    Vector logits;
};

inline ScoredGraph explain_graph(const GnnModel& m, const AttributedGraph& g, const ExplainOptions& opt) {
    if (opt.method == ExplainMethod::bcos) {
        ContributionMap cm = contribution_map(m, g, opt.limits);
        NodeScores ns = node_scores(cm, cm.predicted_class);
        return {std::move(ns), cm.predicted_class, std::move(cm.logits)};
    }
    Vector logits = graph_logits(m, g);
    const std::size_t r = argmax(logits);
    return {integrated_gradients(m, g, opt.ig_steps, r), r, std::move(logits)};
}

/// Mean Jaccard@|G*| and node AUROC over graphs with a two-class mask.
inline ExplanationQuality explanation_quality(const GnnModel& m, const Dataset& d, const ExplainOptions& opt,
                                              std::size_t jobs = 1) {
    std::vector<std::optional<std::pair<double, double>>> per(d.size());
    parallel_for(d.size(), jobs, [&](std::size_t i) {
        const AttributedGraph& g = d.graphs[i];
        if (!g.gt_mask) return;
        const auto k = static_cast<std::size_t>(std::ranges::count(*g.gt_mask, true));
        if (k == 0 || k == g.num_nodes()) return;
        const ScoredGraph sg = explain_graph(m, g, opt);
        if (opt.only_correct && sg.predicted_class != g.label) return;
        per[i] = {jaccard_at_k(sg.scores, *g.gt_mask), node_auroc(sg.scores, *g.gt_mask)};
    });
    ExplanationQuality q;
    for (const auto& v : per) {
        if (!v) continue;
        q.jaccard += v->first;
        q.auroc += v->second;
        ++q.explained;
    }
    if (q.explained > 0) {
        q.jaccard /= static_cast<double>(q.explained);
        q.auroc /= static_cast<double>(q.explained);
    }
    return q;
}

struct ExperimentSpec {
    GinConfig model;
    TrainConfig train;
    SplitFractions fractions;
    ExplainOptions explain;
    bool measure_timing = false;
    std::size_t timing_repeats = 1;
    std::size_t jobs = 1;
};

struct SeedRun {
    FitResult fit;
    DatasetSplit split;
    EvalReport report;
};

/// Per seed s: split with derive(s, 0), init with derive(s, 1), train with derive(s, 2).
inline SeedRun run_seed(const Dataset& d, const ExperimentSpec& spec, std::uint64_t seed, std::size_t jobs = 1) {
    Rng split_rng(Rng::derive(seed, 0));
    DatasetSplit split = stratified_split(d, spec.fractions, split_rng);
    Rng init_rng(Rng::derive(seed, 1));
    FitResult fr = fit(GnnModel::init(spec.model, init_rng), split.train, split.val, spec.train, Rng::derive(seed, 2));

    EvalReport rep;
    rep.seed = seed;
    rep.explainer = to_string(spec.explain.method);
    rep.ig_steps = spec.explain.ig_steps;
    rep.epochs = fr.history.size();
    rep.best_val_f1 = fr.best_val_f1;
    const Predictions tp = predict(fr.model, split.test);
    rep.test = classification_metrics(tp.classes, labels_of(split.test), d.num_classes);
    rep.quality = explanation_quality(fr.model, split.test, spec.explain, jobs);
    if (spec.measure_timing) {
        const GnnModel& m = fr.model;
        rep.timing = time_explainer([&](const AttributedGraph& g) { return explain_graph(m, g, spec.explain); },
                                    split.test.graphs, spec.timing_repeats);
    }
    return {std::move(fr), std::move(split), std::move(rep)};
}

inline std::vector<SeedRun> run_experiment(const Dataset& d, const ExperimentSpec& spec) {
    spec.model.validate();
    spec.train.validate();
    detail::require(d.feature_dim == spec.model.input_dim, "experiment: dataset feature dim != model input dim");
    detail::require(d.num_classes == spec.model.num_classes, "experiment: dataset class count != model classes");
    std::vector<std::optional<SeedRun>> runs(spec.train.seeds.size());
    // Timing runs one seed at a time to keep measurements free of contention.
    const std::size_t jobs = spec.measure_timing ? 1 : spec.jobs;
    parallel_for(runs.size(), jobs, [&](std::size_t i) { runs[i] = run_seed(d, spec, spec.train.seeds[i]); });
    std::vector<SeedRun> out;
    for (auto& r : runs) out.push_back(std::move(*r));
    return out;
}

inline std::vector<EvalReport> reports_of(std::span<const SeedRun> runs) {
    std::vector<EvalReport> out;
    for (const auto& r : runs) out.push_back(r.report);
    return out;
}

/// Summary document; holds no timings so reruns are byte-identical.
inline ojson experiment_summary_json(const ExperimentSpec& spec, std::span<const SeedRun> runs) {
    const std::vector<EvalReport> reports = reports_of(runs);
    const ReportSummary s = summarize(reports);
    ojson j;
    j["model"] = config_to_json(spec.model);
    j["train"] = train_config_to_json(spec.train);
    j["split"] = {spec.fractions.train, spec.fractions.val, spec.fractions.test};
    j["explainer"] = to_string(spec.explain.method);
    if (spec.explain.method == ExplainMethod::ig) j["ig_steps"] = spec.explain.ig_steps;
    j["only_correct"] = spec.explain.only_correct;
    ojson per = ojson::array();
    for (const auto& r : reports) per.push_back(report_json(r));
    j["seeds"] = std::move(per);
    ojson agg;
    agg["accuracy"] = mean_std_json(s.accuracy);
    agg["macro_f1"] = mean_std_json(s.macro_f1);
    agg["jaccard_at_k"] = mean_std_json(s.jaccard);
    agg["node_auroc"] = mean_std_json(s.auroc);
    j["aggregate"] = std::move(agg);
    return j;
}

}  // namespace bcosgnn
