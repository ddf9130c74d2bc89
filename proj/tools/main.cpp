// bcosgnn command-line tool: generate, train, explain, evaluate, sweep-b.

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bcosgnn.hpp"

namespace fs = std::filesystem;
using namespace bcosgnn;

namespace {

/// Bad flag values or combinations; reported with exit code 2.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(what + ": '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw UsageError(what + ": empty list");
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(s)) {
        if (item.find_first_not_of("0123456789") != std::string::npos)
            throw UsageError("--seeds: '" + item + "' is not a non-negative integer");
        out.push_back(std::stoull(item));
    }
    if (out.empty()) throw UsageError("--seeds: empty list");
    return out;
}

std::string join(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

/// Files produced by one command, plus the echoed configuration and manifest.
class Output {
public:
    explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    const fs::path& dir() const { return dir_; }

    void write(const std::string& rel, const std::string& text) {
        const fs::path p = dir_ / rel;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        write_text_file(p.string(), text);
        files_.insert(rel);
    }

    /// Echo key=value lines (loadable again with --config) and write manifest.json. An existing
    /// manifest in the directory is merged so several commands can share one directory.
    void finish(const std::string& command, const std::string& config_name,
                const std::vector<std::pair<std::string, std::string>>& config) {
        std::string text;
        for (const auto& [k, v] : config) text += k + "=" + v + "\n";
        write(config_name, text);
        const fs::path mpath = dir_ / "manifest.json";
        std::set<std::string> all = files_;
        if (fs::exists(mpath)) {
            try {
                for (const auto& f : parse_json_file(mpath.string()).at("files")) all.insert(f.get<std::string>());
            } catch (const std::exception&) {
                // unreadable manifest from elsewhere: replace it
            }
        }
        ojson m;
        m["tool"] = "bcosgnn";
        m["version"] = BCOSGNN_VERSION;
        m["command"] = command;
        m["files"] = std::vector<std::string>(all.begin(), all.end());
        write_text_file(mpath.string(), to_json_text(m, 2) + "\n");
    }

private:
    fs::path dir_;
    std::set<std::string> files_;
};

// ---------------------------------------------------------------------------------------------
// Shared flag groups.

struct GlobalFlags {
    std::optional<std::uint64_t> seed;
    std::string seeds;
    std::size_t jobs = 1;
    std::string config;
    std::string out;

    void add(CLI::App* app, bool with_seed_list) {
        auto* s = app->add_option("--seed", seed, "Random seed");
        if (with_seed_list) app->add_option("--seeds", seeds, "Comma-separated seed list")->excludes(s);
        app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
        app->add_option("--config", config, "key=value file; command-line flags take precedence");
        app->add_option("-o,--out", out, "Output path")->required();
    }

    std::vector<std::uint64_t> seed_list() const {
        if (!seeds.empty()) return parse_seeds(seeds);
        return {seed.value_or(0)};
    }
};

struct ModelFlags {
    std::optional<std::string> variant;
    std::optional<double> b, dropout, epsilon;
    std::optional<std::size_t> hidden, layers, mlp_depth, readout_depth;

    void add(CLI::App* app) {
        app->add_option("--variant", variant, "bcos or relu")->check(CLI::IsMember({"bcos", "relu"}));
        app->add_option("--b", b, "Alignment exponent B >= 1");
        app->add_option("--hidden", hidden, "Hidden width");
        app->add_option("--layers", layers, "Message-passing layers");
        app->add_option("--mlp-depth", mlp_depth, "Layers per update MLP");
        app->add_option("--readout-depth", readout_depth, "Layers in the readout MLP");
        app->add_option("--dropout", dropout, "Dropout before the readout (train time)");
        app->add_option("--epsilon", epsilon, "GIN epsilon (initial value for relu)");
    }

    /// Dataset-dependent preset: GIN for plain graphs, GINE when edges carry features.
    GinConfig resolve(const Dataset& d) const {
        GinConfig c = d.edge_feature_dim ? GinConfig::gine(d.feature_dim, *d.edge_feature_dim, d.num_classes)
                                         : GinConfig::gin(d.feature_dim, d.num_classes);
        if (variant) c.variant = *variant == "relu" ? Variant::relu : Variant::bcos;
        if (b) c.b = *b;
        if (hidden) c.hidden = *hidden;
        if (layers) c.num_layers = *layers;
        if (mlp_depth) c.mlp_depth = *mlp_depth;
        if (readout_depth) c.readout_depth = *readout_depth;
        if (dropout) c.dropout = *dropout;
        if (epsilon) c.epsilon = *epsilon;
        c.validate();
        return c;
    }

    static void echo(const GinConfig& c, std::vector<std::pair<std::string, std::string>>& out) {
        out.emplace_back("variant", c.variant == Variant::bcos ? "bcos" : "relu");
        out.emplace_back("b", fmt_double(c.b));
        out.emplace_back("hidden", std::to_string(c.hidden));
        out.emplace_back("layers", std::to_string(c.num_layers));
        out.emplace_back("mlp-depth", std::to_string(c.mlp_depth));
        out.emplace_back("readout-depth", std::to_string(c.readout_depth));
        out.emplace_back("dropout", fmt_double(c.dropout));
        out.emplace_back("epsilon", fmt_double(c.epsilon));
    }
};

struct TrainFlags {
    TrainConfig cfg;
    std::string loss = to_string(TrainConfig{}.loss);
    std::string split = "0.7,0.2,0.1";

    void add(CLI::App* app) {
        app->add_option("--lr", cfg.lr, "Initial learning rate")->capture_default_str();
        app->add_option("--lr-decay", cfg.lr_decay, "Plateau decay factor")->capture_default_str();
        app->add_option("--plateau-patience", cfg.plateau_patience, "Epochs without improvement before decay")
            ->capture_default_str();
        app->add_option("--min-lr", cfg.min_lr, "Learning-rate floor")->capture_default_str();
        app->add_option("--stop-patience", cfg.stop_patience, "Epochs without improvement before stopping")
            ->capture_default_str();
        app->add_option("--max-epochs", cfg.max_epochs, "Epoch budget")->capture_default_str();
        app->add_option("--batch-size", cfg.batch_size, "Graphs per mini-batch")->capture_default_str();
        app->add_option("--loss", loss, "softmax or sigmoid")->check(CLI::IsMember({"softmax", "sigmoid"}))
            ->capture_default_str();
        app->add_option("--split", split, "train,val,test fractions")->capture_default_str();
    }

    SplitFractions fractions() const {
        const auto v = parse_doubles(split, "--split");
        if (v.size() != 3) throw UsageError("--split: expected three fractions");
        return {v[0], v[1], v[2]};
    }

    TrainConfig resolve(const std::vector<std::uint64_t>& seeds) const {
        TrainConfig c = cfg;
        c.loss = parse_loss_kind(loss);
        c.seeds = seeds;
        c.validate();
        return c;
    }

    void echo(const TrainConfig& c, std::vector<std::pair<std::string, std::string>>& out) const {
        out.emplace_back("lr", fmt_double(c.lr));
        out.emplace_back("lr-decay", fmt_double(c.lr_decay));
        out.emplace_back("plateau-patience", std::to_string(c.plateau_patience));
        out.emplace_back("min-lr", fmt_double(c.min_lr));
        out.emplace_back("stop-patience", std::to_string(c.stop_patience));
        out.emplace_back("max-epochs", std::to_string(c.max_epochs));
        out.emplace_back("batch-size", std::to_string(c.batch_size));
        out.emplace_back("loss", to_string(c.loss));
        out.emplace_back("split", split);
        out.emplace_back("seeds", join(c.seeds));
    }
};

struct ExplainFlags {
    std::string method = "bcos";
    std::size_t steps = kDefaultIgSteps;
    bool only_correct = false;
    std::size_t repeats = 1;
    std::size_t max_nodes = ExplainLimits{}.max_nodes;

    void add(CLI::App* app) {
        app->add_option("--method", method, "bcos or ig")->check(CLI::IsMember({"bcos", "ig"}))->capture_default_str();
        app->add_option("--steps", steps, "Integrated-gradients path steps")->check(CLI::PositiveNumber)
            ->capture_default_str();
        app->add_flag("--only-correct", only_correct, "Score only correctly classified graphs");
        app->add_option("--repeats", repeats, "Timed sweeps over the explained graphs")->check(CLI::PositiveNumber)
            ->capture_default_str();
        app->add_option("--max-nodes", max_nodes, "Largest graph the B-cos explainer accepts")->capture_default_str();
    }

    ExplainOptions resolve() const {
        ExplainOptions o;
        o.method = parse_explain_method(method);
        o.ig_steps = steps;
        o.only_correct = only_correct;
        o.limits.max_nodes = max_nodes;
        return o;
    }

    void echo(std::vector<std::pair<std::string, std::string>>& out) const {
        out.emplace_back("method", method);
        out.emplace_back("steps", std::to_string(steps));
        out.emplace_back("only-correct", only_correct ? "true" : "false");
        out.emplace_back("repeats", std::to_string(repeats));
        out.emplace_back("max-nodes", std::to_string(max_nodes));
    }
};

void require_method_fits(const GnnModel& m, ExplainMethod method) {
    if (method == ExplainMethod::bcos && m.config().variant != Variant::bcos)
        throw UnsupportedVariant("unsupported-variant: --method bcos needs a B-cos checkpoint (use --method ig)");
}

/// Test split of a checkpoint's training run: seed and fractions come from checkpoint metadata.
struct CheckpointContext {
    GnnModel model;
    std::uint64_t seed = 0;
    SplitFractions fractions;
};

CheckpointContext load_context(const std::string& path, std::optional<std::uint64_t> seed_override) {
    const nlohmann::json j = parse_json_file(path);
    CheckpointContext ctx{model_from_json(j), 0, {}};
    if (j.contains("meta")) {
        const auto& meta = j.at("meta");
        if (meta.contains("seed")) ctx.seed = meta.at("seed").get<std::uint64_t>();
        if (meta.contains("split")) {
            const auto f = meta.at("split").get<std::vector<double>>();
            if (f.size() == 3) ctx.fractions = {f[0], f[1], f[2]};
        }
    }
    if (seed_override) ctx.seed = *seed_override;
    return ctx;
}

void check_compatible(const GnnModel& m, const Dataset& d) {
    const GinConfig& c = m.config();
    if (c.input_dim != d.feature_dim)
        throw ContractViolation("checkpoint expects " + std::to_string(c.input_dim) + " node features, dataset has " +
                                std::to_string(d.feature_dim));
    if (c.num_classes != d.num_classes)
        throw ContractViolation("checkpoint has " + std::to_string(c.num_classes) + " classes, dataset has " +
                                std::to_string(d.num_classes));
}

// ---------------------------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string dataset;
    GlobalFlags global;
    std::optional<std::size_t> num_graphs, base_nodes, attach, degree_cap, scaffold_min, scaffold_max;
    std::optional<double> double_bond_prob;
};

int cmd_generate(const GenerateArgs& a) {
    const std::uint64_t seed = a.global.seed.value_or(0);
    std::vector<std::pair<std::string, std::string>> echo{{"seed", std::to_string(seed)}};
    Dataset d;
    if (a.dataset == "ba2motif") {
        if (a.scaffold_min || a.scaffold_max || a.double_bond_prob)
            throw UsageError("scaffold options apply to halobenzene only");
        Ba2MotifSpec s;
        s.seed = seed;
        if (a.num_graphs) s.num_graphs = *a.num_graphs;
        if (a.base_nodes) s.base_nodes = *a.base_nodes;
        if (a.attach) s.attach = *a.attach;
        if (a.degree_cap) s.degree_cap = *a.degree_cap;
        GenerationReport rep;
        d = generate_ba2motif(s, &rep);
        if (rep.capped_degrees > 0)
            std::cerr << "note: " << rep.capped_degrees << " node degrees clipped to the one-hot cap " << s.degree_cap
                      << "\n";
        echo.insert(echo.end(), {{"num-graphs", std::to_string(s.num_graphs)},
                                 {"base-nodes", std::to_string(s.base_nodes)},
                                 {"attach", std::to_string(s.attach)},
                                 {"degree-cap", std::to_string(s.degree_cap)}});
    } else {
        if (a.base_nodes || a.attach || a.degree_cap) throw UsageError("BA options apply to ba2motif only");
        HaloBenzeneSpec s;
        s.seed = seed;
        if (a.num_graphs) s.num_graphs = *a.num_graphs;
        if (a.scaffold_min) s.scaffold_min = *a.scaffold_min;
        if (a.scaffold_max) s.scaffold_max = *a.scaffold_max;
        if (a.double_bond_prob) s.double_bond_prob = *a.double_bond_prob;
        d = generate_halobenzene(s);
        echo.insert(echo.end(), {{"num-graphs", std::to_string(s.num_graphs)},
                                 {"scaffold-min", std::to_string(s.scaffold_min)},
                                 {"scaffold-max", std::to_string(s.scaffold_max)},
                                 {"double-bond-prob", fmt_double(s.double_bond_prob)}});
    }

    const fs::path target(a.global.out);
    Output out(target.has_parent_path() ? target.parent_path() : fs::path("."));
    const std::string stem = target.stem().string();
    const ojson stats = dataset_stats_json(d);
    out.write(target.filename().string(), to_json_text(dataset_to_json(d)));
    out.write(stem + ".stats.json", to_json_text(stats, 2) + "\n");
    out.finish("generate " + a.dataset, stem + ".config.txt", echo);
    std::cout << to_json_text(stats, 2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data;
    GlobalFlags global;
    ModelFlags model;
    TrainFlags train;
    ExplainFlags explain;
    bool timing = false;
};

int cmd_train(const TrainArgs& a) {
    const Dataset d = load_dataset(a.data);
    ExperimentSpec spec;
    spec.model = a.model.resolve(d);
    spec.train = a.train.resolve(a.global.seed_list());
    spec.fractions = a.train.fractions();
    spec.explain = a.explain.resolve();
    spec.measure_timing = a.timing;
    spec.timing_repeats = a.explain.repeats;
    spec.jobs = a.global.jobs;
    if (spec.model.variant != Variant::bcos && spec.explain.method == ExplainMethod::bcos)
        throw UnsupportedVariant("unsupported-variant: --variant relu needs --method ig");

    std::cerr << "training " << spec.train.seeds.size() << " seed(s) on " << d.size() << " graphs\n";
    const std::vector<SeedRun> runs = run_experiment(d, spec);

    Output out(a.global.out);
    for (const auto& r : runs) {
        const std::string s = std::to_string(r.report.seed);
        ojson meta;
        meta["seed"] = r.report.seed;
        meta["split"] = {spec.fractions.train, spec.fractions.val, spec.fractions.test};
        meta["best_epoch"] = r.fit.best_epoch;
        meta["best_val_f1"] = r.fit.best_val_f1;
        out.write("checkpoint_seed" + s + ".json", to_json_text(model_to_json(r.fit.model, meta)));
        out.write("history_seed" + s + ".csv", history_csv(r.fit.history));
        std::cerr << "seed " << s << ": epochs " << r.fit.history.size() << ", test F1 " << r.report.test.macro_f1
                  << ", jaccard " << r.report.quality.jaccard << ", auroc " << r.report.quality.auroc << "\n";
    }
    const std::vector<EvalReport> reports = reports_of(runs);
    out.write("summary.json", to_json_text(experiment_summary_json(spec, runs), 2) + "\n");
    out.write("results.csv", reports_csv(reports, fs::path(a.data).stem().string()));
    if (a.timing) {
        ojson t = ojson::array();
        for (const auto& r : reports) t.push_back(timing_json(r));
        out.write("timing.json", to_json_text(t, 2) + "\n");
    }

    std::vector<std::pair<std::string, std::string>> echo{{"data", a.data}};
    ModelFlags::echo(spec.model, echo);
    a.train.echo(spec.train, echo);
    a.explain.echo(echo);
    echo.emplace_back("timing", a.timing ? "true" : "false");
    out.finish("train", "config.txt", echo);
    return 0;
}

// ---------------------------------------------------------------------------------------------
// explain

struct ExplainArgs {
    std::string checkpoint, data;
    GlobalFlags global;
    ExplainFlags explain;
    std::optional<std::size_t> k;
    std::optional<double> fraction;
    std::string graphs = "test";
};

int cmd_explain(const ExplainArgs& a) {
    const CheckpointContext ctx = load_context(a.checkpoint, a.global.seed);
    const ExplainOptions opt = a.explain.resolve();
    require_method_fits(ctx.model, opt.method);
    const Dataset d = load_dataset(a.data);
    check_compatible(ctx.model, d);
    if (a.k && a.fraction) throw UsageError("--k and --fraction are mutually exclusive");

    std::vector<std::size_t> ids;
    if (a.graphs == "all") {
        ids.resize(d.size());
        std::iota(ids.begin(), ids.end(), std::size_t{0});
    } else {
        Rng split_rng(Rng::derive(ctx.seed, 0));
        ids = stratified_split_indices(d, ctx.fractions, split_rng).test;
    }
    if (ids.empty()) throw UsageError("no graphs to explain");
    if (!a.k && !a.fraction)
        for (std::size_t id : ids)
            if (!d.graphs[id].gt_mask)
                throw UsageError("graph " + std::to_string(id) + " has no ground-truth mask; pass --k or --fraction");

    std::vector<ExplanationRecord> records(ids.size());
    std::vector<std::optional<double>> aurocs(ids.size());
    parallel_for(ids.size(), a.global.jobs, [&](std::size_t i) {
        const AttributedGraph& g = d.graphs[ids[i]];
        ScoredGraph sg = explain_graph(ctx.model, g, opt);
        ExplanationRecord& r = records[i];
        r.graph_id = ids[i];
        r.predicted_class = sg.predicted_class;
        r.logits = std::move(sg.logits);
        const bool has_mask = g.gt_mask && std::ranges::count(*g.gt_mask, true) > 0 &&
                              static_cast<std::size_t>(std::ranges::count(*g.gt_mask, true)) < g.num_nodes();
        if (a.fraction) {
            r.explanation = mass_fraction(sg.scores, *a.fraction);
        } else {
            const std::size_t k =
                a.k ? std::min(*a.k, g.num_nodes())
                    : static_cast<std::size_t>(std::ranges::count(*g.gt_mask, true));
            r.explanation = top_k(sg.scores, k);
        }
        if (has_mask) {
            r.jaccard = jaccard_at_k(sg.scores, *g.gt_mask);
            aurocs[i] = node_auroc(sg.scores, *g.gt_mask);
        }
        r.scores = std::move(sg.scores);
    });

    Output out(a.global.out);
    double jsum = 0.0, asum = 0.0;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string base = "explanations/graph_" + std::to_string(r.graph_id);
        out.write(base + ".json", to_json_text(explanation_to_json(r), 2) + "\n");
        out.write(base + ".dot", explanation_to_dot(d.graphs[r.graph_id], r.scores, "graph_" + std::to_string(r.graph_id)));
        if (r.jaccard && aurocs[i]) {
            jsum += *r.jaccard;
            asum += *aurocs[i];
            ++scored;
        }
    }
    std::vector<AttributedGraph> explained;
    for (std::size_t id : ids) explained.push_back(d.graphs[id]);
    const Timing t = time_explainer([&](const AttributedGraph& g) { return explain_graph(ctx.model, g, opt); },
                                    explained, a.explain.repeats);

    ojson summary;
    summary["method"] = to_string(opt.method);
    if (opt.method == ExplainMethod::ig) summary["ig_steps"] = opt.ig_steps;
    summary["graphs"] = ids.size();
    summary["scored_graphs"] = scored;
    if (scored > 0) {
        summary["jaccard_at_k"] = jsum / static_cast<double>(scored);
        summary["node_auroc"] = asum / static_cast<double>(scored);
    }
    out.write("explanations.json", to_json_text(summary, 2) + "\n");
    ojson tj;
    tj["method"] = to_string(opt.method);
    tj["ms_per_graph"] = t.ms_per_graph;
    tj["ms_std"] = t.ms_std;
    tj["repeats"] = t.repeats;
    out.write("timing.json", to_json_text(tj, 2) + "\n");
    std::cout << to_json_text(summary, 2) << "\n";

    std::vector<std::pair<std::string, std::string>> echo{
        {"checkpoint", a.checkpoint}, {"data", a.data}, {"seed", std::to_string(ctx.seed)}, {"graphs", a.graphs}};
    a.explain.echo(echo);
    if (a.k) echo.emplace_back("k", std::to_string(*a.k));
    if (a.fraction) echo.emplace_back("fraction", fmt_double(*a.fraction));
    out.finish("explain", "config.txt", echo);
    return 0;
}

// ---------------------------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string checkpoint, data;
    GlobalFlags global;
    ExplainFlags explain;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const CheckpointContext ctx = load_context(a.checkpoint, a.global.seed);
    const ExplainOptions opt = a.explain.resolve();
    require_method_fits(ctx.model, opt.method);
    const Dataset d = load_dataset(a.data);
    check_compatible(ctx.model, d);
    Rng split_rng(Rng::derive(ctx.seed, 0));
    const Dataset test = stratified_split(d, ctx.fractions, split_rng).test;

    EvalReport rep;
    rep.seed = ctx.seed;
    rep.explainer = to_string(opt.method);
    rep.ig_steps = opt.ig_steps;
    const Predictions p = predict(ctx.model, test);
    rep.test = classification_metrics(p.classes, labels_of(test), d.num_classes);
    rep.quality = explanation_quality(ctx.model, test, opt, a.global.jobs);
    rep.timing = time_explainer([&](const AttributedGraph& g) { return explain_graph(ctx.model, g, opt); },
                                test.graphs, a.explain.repeats);

    Output out(a.global.out);
    const ojson ev = report_json(rep);
    out.write("evaluation.json", to_json_text(ev, 2) + "\n");
    out.write("timing.json", to_json_text(timing_json(rep), 2) + "\n");
    out.write("results.csv", reports_csv(std::span<const EvalReport>(&rep, 1), fs::path(a.data).stem().string()));
    std::cout << to_json_text(ev, 2) << "\n";

    std::vector<std::pair<std::string, std::string>> echo{
        {"checkpoint", a.checkpoint}, {"data", a.data}, {"seed", std::to_string(ctx.seed)}};
    a.explain.echo(echo);
    out.finish("evaluate", "config.txt", echo);
    return 0;
}

// ---------------------------------------------------------------------------------------------
// sweep-b

struct SweepArgs {
    std::string data;
    std::string b_values = "1,1.5,2,2.5,3";
    GlobalFlags global;
    ModelFlags model;
    TrainFlags train;
};

int cmd_sweep_b(const SweepArgs& a) {
    const Dataset d = load_dataset(a.data);
    const std::vector<double> bs = parse_doubles(a.b_values, "--b-values");
    ExperimentSpec spec;
    spec.model = a.model.resolve(d);
    if (spec.model.variant != Variant::bcos) throw UsageError("sweep-b needs --variant bcos");
    spec.train = a.train.resolve(a.global.seed_list());
    spec.fractions = a.train.fractions();
    spec.jobs = a.global.jobs;

    std::string csv = "b,val_accuracy,val_accuracy_std,val_f1,node_auroc,node_auroc_std,jaccard_at_k\n";
    ojson rows = ojson::array();
    for (double b : bs) {
        spec.model.b = b;
        spec.model.validate();
        std::cerr << "B = " << b << "\n";
        const std::vector<SeedRun> runs = run_experiment(d, spec);
        std::vector<double> val_acc, val_f1;
        for (const auto& r : runs) {
            const Predictions vp = predict(r.fit.model, r.split.val);
            const auto m = classification_metrics(vp.classes, labels_of(r.split.val), d.num_classes);
            val_acc.push_back(m.accuracy);
            val_f1.push_back(m.macro_f1);
        }
        const std::vector<EvalReport> reports = reports_of(runs);
        const ReportSummary s = summarize(reports);
        const MeanStd acc = mean_std(val_acc), f1 = mean_std(val_f1);
        char line[256];
        std::snprintf(line, sizeof line, "%g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", b, acc.mean, acc.std, f1.mean,
                      s.auroc.mean, s.auroc.std, s.jaccard.mean);
        csv += line;
        ojson row;
        row["b"] = b;
        row["val_accuracy"] = mean_std_json(acc);
        row["val_f1"] = mean_std_json(f1);
        row["node_auroc"] = mean_std_json(s.auroc);
        row["jaccard_at_k"] = mean_std_json(s.jaccard);
        ojson per = ojson::array();
        for (const auto& r : reports) per.push_back(report_json(r));
        row["seeds"] = std::move(per);
        rows.push_back(std::move(row));
    }

    Output out(a.global.out);
    out.write("sweep.csv", csv);
    out.write("sweep.json", to_json_text(rows, 2) + "\n");
    std::cout << csv;
    std::vector<std::pair<std::string, std::string>> echo{{"data", a.data}, {"b-values", a.b_values}};
    ModelFlags::echo(spec.model, echo);
    echo.erase(std::ranges::find_if(echo, [](const auto& kv) { return kv.first == "b"; }));
    a.train.echo(spec.train, echo);
    out.finish("sweep-b", "config.txt", echo);
    return 0;
}

// ---------------------------------------------------------------------------------------------

/// Splices the lines of a --config file in front of the command-line flags, so with TakeLast the
/// command line wins. Lines are key=value; blank lines and # comments are skipped.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
    if (path.empty() || args.size() < 2) return args;
    std::istringstream in(read_text_file(path));
    std::vector<std::string> injected;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        line.erase(0, line.find_first_not_of(" \t"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        key.erase(key.find_last_not_of(" \t") + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        if (key == "config") continue;
        injected.push_back("--" + key + "=" + value);
    }
    // After the subcommand name (args[1]) and before everything else.
    args.insert(args.begin() + 2, injected.begin(), injected.end());
    return args;
}

int run(int argc, char** argv) {
    CLI::App app{"B-cos graph neural networks: datasets, training and explanations", "bcosgnn"};
    app.set_version_flag("--version", BCOSGNN_VERSION);
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Generate a benchmark dataset");
    g->add_option("dataset", gen.dataset, "ba2motif or halobenzene")
        ->required()
        ->check(CLI::IsMember({"ba2motif", "halobenzene"}));
    gen.global.add(g, false);
    g->add_option("--num-graphs", gen.num_graphs, "Number of graphs");
    g->add_option("--base-nodes", gen.base_nodes, "BA base graph size");
    g->add_option("--attach", gen.attach, "BA edges per new node");
    g->add_option("--degree-cap", gen.degree_cap, "Largest one-hot degree");
    g->add_option("--scaffold-min", gen.scaffold_min, "Smallest scaffold");
    g->add_option("--scaffold-max", gen.scaffold_max, "Largest scaffold");
    g->add_option("--double-bond-prob", gen.double_bond_prob, "Scaffold double-bond probability");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train over seeds and report test metrics and explanation quality");
    t->add_option("--data", tr.data, "Dataset JSON")->required();
    tr.global.add(t, true);
    tr.model.add(t);
    tr.train.add(t);
    tr.explain.add(t);
    t->add_flag("--timing", tr.timing, "Also time the explainer on the test split");

    ExplainArgs ex;
    auto* e = app.add_subcommand("explain", "Write per-graph explanations (JSON and DOT)");
    e->add_option("--checkpoint", ex.checkpoint, "Model checkpoint")->required();
    e->add_option("--data", ex.data, "Dataset JSON")->required();
    ex.global.add(e, false);
    ex.explain.add(e);
    e->add_option("--k", ex.k, "Top-k size (default: ground-truth size)")->check(CLI::PositiveNumber);
    e->add_option("--fraction", ex.fraction, "Select by positive-mass fraction instead of top-k");
    e->add_option("--graphs", ex.graphs, "test or all")->check(CLI::IsMember({"test", "all"}))->capture_default_str();

    EvaluateArgs ev;
    auto* v = app.add_subcommand("evaluate", "Test-split metrics, explanation quality and timing of a checkpoint");
    v->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    v->add_option("--data", ev.data, "Dataset JSON")->required();
    ev.global.add(v, false);
    ev.explain.add(v);

    SweepArgs sw;
    auto* s = app.add_subcommand("sweep-b", "Train one experiment per B and tabulate accuracy and explanation AUC");
    s->add_option("--data", sw.data, "Dataset JSON")->required();
    s->add_option("--b-values", sw.b_values, "Comma-separated B values")->capture_default_str();
    sw.global.add(s, true);
    sw.model.add(s);
    sw.train.add(s);

    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(std::move(args));
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_explain(ex);
    if (*v) return cmd_evaluate(ev);
    return cmd_sweep_b(sw);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UnsupportedVariant& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
