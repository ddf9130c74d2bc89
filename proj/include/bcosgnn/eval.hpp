#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bcosgnn/error.hpp"
#include "bcosgnn/explain.hpp"
#include "bcosgnn/graph.hpp"
#include "bcosgnn/json_io.hpp"

namespace bcosgnn {

/// IoU of the top-|G*| nodes with G*.
inline double jaccard_at_k(const NodeScores& ns, const std::vector<bool>& gt) {
    detail::require(gt.size() == ns.scores.size(), "jaccard_at_k: mask length != node count");
    const auto k = static_cast<std::size_t>(std::count(gt.begin(), gt.end(), true));
    if (k == 0) throw ContractViolation("jaccard_at_k: ground-truth mask is empty");
    std::size_t hit = 0;
    for (std::size_t r = 0; r < k; ++r)
        if (gt[ns.ranking[r]]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(2 * k - hit);
}

/// Pairwise rank probability; ties count 0.5.
inline double node_auroc(const NodeScores& ns, const std::vector<bool>& gt) {
    detail::require(gt.size() == ns.scores.size(), "node_auroc: mask length != node count");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < gt.size(); ++i) (gt[i] ? pos : neg).push_back(ns.scores[i]);
    if (pos.empty() || neg.empty()) throw ContractViolation("node_auroc: undefined, mask has a single class");
    double total = 0.0;
    for (double u : pos)
        for (double v : neg) total += u > v ? 1.0 : (u == v ? 0.5 : 0.0);
    return total / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// Macro-F1 averages over classes that occur in `labels`.
inline ClassificationMetrics classification_metrics(std::span<const std::size_t> preds,
                                                    std::span<const std::size_t> labels, std::size_t num_classes) {
    detail::require(preds.size() == labels.size(), "classification_metrics: length mismatch");
    if (preds.empty()) throw ContractViolation("classification_metrics: empty input");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0), support(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        detail::require(preds[i] < num_classes && labels[i] < num_classes, "classification_metrics: class out of range");
        ++support[labels[i]];
        if (preds[i] == labels[i]) {
            ++correct;
            ++tp[labels[i]];
        } else {
            ++fp[preds[i]];
            ++fn[labels[i]];
        }
    }
    double f1_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) continue;
        ++present;
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    return {static_cast<double>(correct) / static_cast<double>(preds.size()), f1_sum / static_cast<double>(present)};
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(std::span<const double> v) {
    if (v.empty()) return {};
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / n)};
}

struct Timing {
    double ms_per_graph = 0.0;  // mean over repeats
    double ms_std = 0.0;        // across repeats
    std::size_t repeats = 0;
};

/// Wall-clock ms per explanation. explain(g) is run once per graph untimed as warm-up, then
/// `repeats` timed sweeps over all graphs.
template <typename Explainer>
Timing time_explainer(Explainer&& explain, std::span<const AttributedGraph> graphs, std::size_t repeats) {
    if (graphs.empty()) throw ContractViolation("time_explainer: no graphs");
    if (repeats < 1) throw ContractViolation("time_explainer: repeats must be >= 1");
    using clock = std::chrono::steady_clock;
    for (const auto& g : graphs) (void)explain(g);
    std::vector<double> per_repeat;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = clock::now();
        for (const auto& g : graphs) (void)explain(g);
        const std::chrono::duration<double, std::milli> dt = clock::now() - t0;
        per_repeat.push_back(dt.count() / static_cast<double>(graphs.size()));
    }
    const MeanStd ms = mean_std(per_repeat);
    return {ms.mean, ms.std, repeats};
}

struct ExplanationQuality {
    double jaccard = 0.0;
    double auroc = 0.0;
    std::size_t explained = 0;  // graphs with a usable mask
};

struct EvalReport {
    std::uint64_t seed = 0;
    std::string explainer;
    std::size_t ig_steps = 0;
    std::size_t epochs = 0;
    double best_val_f1 = 0.0;
    ClassificationMetrics test;
    ExplanationQuality quality;
    std::optional<Timing> timing;
};

/// Deterministic fields only; timings go through timing_json.
inline ojson report_json(const EvalReport& r) {
    ojson j;
    j["seed"] = r.seed;
    j["explainer"] = r.explainer;
    if (r.explainer == "ig") j["ig_steps"] = r.ig_steps;
    j["epochs"] = r.epochs;
    j["best_val_f1"] = r.best_val_f1;
    j["accuracy"] = r.test.accuracy;
    j["macro_f1"] = r.test.macro_f1;
    j["jaccard_at_k"] = r.quality.jaccard;
    j["node_auroc"] = r.quality.auroc;
    j["explained_graphs"] = r.quality.explained;
    return j;
}

inline ojson timing_json(const EvalReport& r) {
    ojson j;
    j["seed"] = r.seed;
    j["explainer"] = r.explainer;
    if (r.explainer == "ig") j["ig_steps"] = r.ig_steps;
    if (r.timing) {
        j["ms_per_graph"] = r.timing->ms_per_graph;
        j["ms_std"] = r.timing->ms_std;
        j["repeats"] = r.timing->repeats;
    }
    return j;
}

struct ReportSummary {
    MeanStd accuracy, macro_f1, jaccard, auroc;
    std::optional<MeanStd> ms_per_graph;
};

inline ReportSummary summarize(std::span<const EvalReport> reports) {
    std::vector<double> acc, f1, jac, auc, ms;
    for (const auto& r : reports) {
        acc.push_back(r.test.accuracy);
        f1.push_back(r.test.macro_f1);
        jac.push_back(r.quality.jaccard);
        auc.push_back(r.quality.auroc);
        if (r.timing) ms.push_back(r.timing->ms_per_graph);
    }
    ReportSummary s{mean_std(acc), mean_std(f1), mean_std(jac), mean_std(auc), std::nullopt};
    if (!ms.empty()) s.ms_per_graph = mean_std(ms);
    return s;
}

inline ojson mean_std_json(const MeanStd& m) {
    ojson j;
    j["mean"] = m.mean;
    j["std"] = m.std;
    return j;
}

/// One CSV row per seed plus a mean and a std row.
inline std::string reports_csv(std::span<const EvalReport> reports, const std::string& dataset) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    std::string out = "dataset,method,seed,jaccard,auc,ms_per_graph,accuracy,f1\n";
    for (const auto& r : reports)
        out += dataset + "," + r.explainer + "," + std::to_string(r.seed) + "," + fmt(r.quality.jaccard) + "," +
               fmt(r.quality.auroc) + "," + (r.timing ? fmt(r.timing->ms_per_graph) : "") + "," +
               fmt(r.test.accuracy) + "," + fmt(r.test.macro_f1) + "\n";
    if (!reports.empty()) {
        const ReportSummary s = summarize(reports);
        const std::string m = reports.front().explainer;
        out += dataset + "," + m + ",mean," + fmt(s.jaccard.mean) + "," + fmt(s.auroc.mean) + "," +
               (s.ms_per_graph ? fmt(s.ms_per_graph->mean) : "") + "," + fmt(s.accuracy.mean) + "," +
               fmt(s.macro_f1.mean) + "\n";
        out += dataset + "," + m + ",std," + fmt(s.jaccard.std) + "," + fmt(s.auroc.std) + "," +
               (s.ms_per_graph ? fmt(s.ms_per_graph->std) : "") + "," + fmt(s.accuracy.std) + "," +
               fmt(s.macro_f1.std) + "\n";
    }
    return out;
}

}  // namespace bcosgnn
