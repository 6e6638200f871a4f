#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "augment.hpp"
#include "bandit.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "features.hpp"
#include "random.hpp"
#include "scenarios.hpp"
#include "simulator.hpp"

namespace robust_bandit {

namespace fs = std::filesystem;

enum class Variant { baseline, baseline_with_reg, proposed, proposed_no_reg, proposed_no_beta };

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::baseline, "baseline"},
                                       {Variant::baseline_with_reg, "baseline_with_reg"},
                                       {Variant::proposed, "proposed"},
                                       {Variant::proposed_no_reg, "proposed_no_reg"},
                                       {Variant::proposed_no_beta, "proposed_no_beta"}})

NLOHMANN_JSON_SERIALIZE_ENUM(ScoringMode, {{ScoringMode::thompson, "thompson"},
                                           {ScoringMode::posterior_mean, "posterior_mean"}})

inline std::string to_string(Variant v) { return json(v).get<std::string>(); }

struct VariantFlags {
    bool augmentation = false;
    bool temporal_signals = false;
    bool regularization = false;
    bool beta_stage = false;

    friend bool operator==(const VariantFlags&, const VariantFlags&) = default;
};

inline VariantFlags flags_for(Variant v) {
    switch (v) {
        case Variant::baseline: return {false, false, false, false};
        case Variant::baseline_with_reg: return {false, false, true, false};
        case Variant::proposed: return {true, true, true, true};
        case Variant::proposed_no_reg: return {true, true, false, true};
        case Variant::proposed_no_beta: return {true, true, true, false};
    }
    throw bandit_error("invalid_config", "unknown variant");
}

struct ExperimentConfig {
    std::string config_id;  // defaults to the variant name
    Variant variant = Variant::proposed;
    std::string scenario = "stationary";
    std::optional<SimScenario> scenario_script;  // replaces the canned scenario when set
    ScenarioOptions scenario_options;
    int n_runs = 40;
    double period = 24.0;
    RecencyBinning binning;
    double slot_hours = 8.0;
    double alpha = 0.15;
    double beta = 0.10;
    SmoothingConfig smoothing;
    TrainConfig train;
    int negatives_per_positive = 3;
    double prior_variance = 1.0;
    std::size_t history_depth = 10;
    std::uint64_t data_seed = 1;
    std::uint64_t model_seed = 1;
    ScoringMode eval_scoring = ScoringMode::thompson;
    bool write_logs = true;
    bool write_training_sets = false;
    std::string output_dir;  // empty keeps everything in memory

    std::string id() const { return config_id.empty() ? to_string(variant) : config_id; }
    VariantFlags flags() const { return flags_for(variant); }

    void validate() const {
        if (n_runs < 1) throw bandit_error("invalid_config", "n_runs must be at least 1");
        if (!(period > 0.0)) throw bandit_error("invalid_config", "period_T must be positive");
        if (!(slot_hours > 0.0) || 3.0 * slot_hours > period + 1e-9)
            throw bandit_error("invalid_config", "slot_hours must be positive with 3 * slot_hours <= period_T");
        if (negatives_per_positive < 1) throw bandit_error("invalid_config", "negatives_per_positive must be >= 1");
        binning.validate();
        AugmentConfig{alpha, beta, 0}.validate();
        smoothing.validate();
        train.validate();
        if (!csv::is_plain_token(id())) throw bandit_error("invalid_config", "config_id must be a plain token");
    }

    SimScenario resolve_scenario() const {
        if (scenario_script) {
            auto s = *scenario_script;
            s.binning = binning;
            s.period = period;
            s.validate();
            return s;
        }
        auto opts = scenario_options;
        opts.period = period;
        opts.binning = binning;
        return make_scenario(scenario, data_seed, n_runs, opts);
    }

    FeatureSchema schema(const SimScenario& s) const {
        return FeatureSchema(s.marketing_classes, s.content_categories, binning, flags().temporal_signals);
    }
};

inline void to_json(json& j, const ScenarioOptions& o) {
    j = json::object();
    if (o.users_per_window) j["users_per_window"] = *o.users_per_window;
    if (o.eval_users_per_window) j["eval_users_per_window"] = *o.eval_users_per_window;
    if (o.slate_size) j["slate_size"] = *o.slate_size;
    if (o.n_titles) j["n_titles"] = *o.n_titles;
}

inline void from_json(const json& j, ScenarioOptions& o) {
    o = ScenarioOptions{};
    if (j.contains("users_per_window")) o.users_per_window = j.at("users_per_window").get<std::size_t>();
    if (j.contains("eval_users_per_window")) o.eval_users_per_window = j.at("eval_users_per_window").get<std::size_t>();
    if (j.contains("slate_size")) o.slate_size = j.at("slate_size").get<std::size_t>();
    if (j.contains("n_titles")) o.n_titles = j.at("n_titles").get<std::size_t>();
}

inline void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"config_id", c.id()},
             {"variant", c.variant},
             {"scenario", c.scenario_script ? json(*c.scenario_script) : json(c.scenario)},
             {"scenario_options", c.scenario_options},
             {"n_runs", c.n_runs},
             {"period_T", c.period},
             {"recency_boundaries", c.binning.boundaries},
             {"slot_hours", c.slot_hours},
             {"alpha", c.alpha},
             {"beta", c.beta},
             {"lambda", c.smoothing.lambda},
             {"q", c.smoothing.q},
             {"train",
              {{"epochs", c.train.epochs},
               {"learning_rate", c.train.learning_rate},
               {"adam_beta1", c.train.adam_beta1},
               {"adam_beta2", c.train.adam_beta2},
               {"adam_epsilon", c.train.adam_epsilon},
               {"batch_size", c.train.batch_size}}},
             {"negatives_per_positive", c.negatives_per_positive},
             {"prior_variance", c.prior_variance},
             {"history_depth", c.history_depth},
             {"data_seed", c.data_seed},
             {"model_seed", c.model_seed},
             {"eval_scoring", c.eval_scoring},
             {"write_logs", c.write_logs},
             {"write_training_sets", c.write_training_sets},
             {"output_dir", c.output_dir}};
}

// Every key is optional; absent keys keep their documented defaults.
inline void from_json(const json& j, ExperimentConfig& c) {
    c = ExperimentConfig{};
    c.variant = j.value("variant", c.variant);
    c.config_id = j.value("config_id", std::string{});
    if (j.contains("scenario")) {
        const auto& s = j.at("scenario");
        if (s.is_string()) c.scenario = s.get<std::string>();
        else {
            c.scenario_script = s.get<SimScenario>();
            c.scenario = c.scenario_script->id;
        }
    }
    if (j.contains("scenario_options")) c.scenario_options = j.at("scenario_options").get<ScenarioOptions>();
    c.n_runs = j.value("n_runs", c.n_runs);
    c.period = j.value("period_T", c.period);
    c.binning.boundaries = j.value("recency_boundaries", c.binning.boundaries);
    c.slot_hours = j.value("slot_hours", c.slot_hours);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.smoothing.lambda = j.value("lambda", c.smoothing.lambda);
    c.smoothing.q = j.value("q", c.smoothing.q);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.adam_beta1 = t.value("adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = t.value("adam_beta2", c.train.adam_beta2);
        c.train.adam_epsilon = t.value("adam_epsilon", c.train.adam_epsilon);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
    }
    c.negatives_per_positive = j.value("negatives_per_positive", c.negatives_per_positive);
    c.prior_variance = j.value("prior_variance", c.prior_variance);
    c.history_depth = j.value("history_depth", c.history_depth);
    c.data_seed = j.value("data_seed", c.data_seed);
    c.model_seed = j.value("model_seed", c.model_seed);
    c.eval_scoring = j.value("eval_scoring", c.eval_scoring);
    c.write_logs = j.value("write_logs", c.write_logs);
    c.write_training_sets = j.value("write_training_sets", c.write_training_sets);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw bandit_error("io_error", "cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw bandit_error("invalid_config", std::string("config is not valid JSON: ") + e.what());
    }
    try {
        return j.get<ExperimentConfig>();
    } catch (const json::exception& e) {
        throw bandit_error("invalid_config", e.what());
    }
}

struct ExperimentResult {
    ExperimentConfig config;
    FeatureSchema schema;
    std::vector<RunReport> reports;
    std::vector<WeightSnapshot> trajectory;  // mean weights after every run
    bool complete = false;
    int resumed_at = -1;  // first run executed by this call after a resume
};

struct RunControl {
    int max_runs = -1;  // stop after this many runs in this call; -1 = no limit
};

// ---------------------------------------------------------------------------
// Per-run building blocks

inline TrainingExample to_example(const Impression& imp, const TitleArm& arm, const NdsTable& nds,
                                  const RecencyBinning& binning) {
    TrainingExample e;
    e.title_id = imp.title_id;
    e.request_id = imp.request_id;
    e.fields = describe(arm, imp.timestamp, nds, binning);
    e.reward = imp.streamed ? 1 : 0;
    return e;
}

// Column means and overall maximum of the observed (not filled) signal
// values in a training set. Columns with no observation fall back to
// `previous` when it carries statistics.
inline bool attach_training_stats(NdsTable& table, const std::vector<TrainingExample>& examples,
                                  const NdsTable& previous) {
    NdsColumns sum{}, avg{};
    std::array<std::size_t, num_nds_columns> n{};
    double max_seen = 0.0;
    bool any = false;
    for (const auto& e : examples) {
        if (e.origin != ExampleOrigin::organic) continue;
        for (std::size_t c = 0; c < num_nds_columns; ++c)
            if (e.fields.nds_observed[c]) {
                sum[c] += e.fields.nds[c];
                ++n[c];
                max_seen = std::max(max_seen, e.fields.nds[c]);
                any = true;
            }
    }
    bool complete = true;
    for (std::size_t c = 0; c < num_nds_columns; ++c) {
        if (n[c] > 0) avg[c] = sum[c] / static_cast<double>(n[c]);
        else if (previous.has_training_stats()) avg[c] = previous.column_average()[c];
        else complete = false;
    }
    if (!any && previous.has_training_stats()) max_seen = previous.train_max();
    table.set_training_stats(avg, max_seen);
    return complete;
}

struct WindowLogs {
    InteractionLog train;
    InteractionLog eval;
};

inline RankingPolicy thompson_policy(const ModelState& model, const Catalog& catalog, const NdsTable& nds) {
    auto ranker = std::make_shared<Ranker>(model, catalog, nds, ScoringMode::thompson);
    return [ranker](double now, SplitMix64& rng) {
        auto scored = ranker->rank(now, rng);
        std::vector<std::string> ids;
        ids.reserve(scored.size());
        for (auto& s : scored) ids.push_back(std::move(s.title_id));
        return ids;
    };
}

inline WindowLogs simulate_window(const SimScenario& scenario, const RunClock& clock, const Catalog& catalog,
                                  const RankingPolicy& policy) {
    return WindowLogs{generate_window(scenario, clock, catalog, policy, UserPool::train),
                      generate_window(scenario, clock, catalog, policy, UserPool::eval)};
}

// Scores model `model` (trained through run `run_index`) on the held-out
// users of the following window.
inline RunReport evaluate_run(const ExperimentConfig& cfg, int run_index, const ModelState& model,
                              const Catalog& catalog, const NdsTable& nds, const InteractionLog& eval_log) {
    RunReport report;
    report.run_index = run_index;
    report.config_id = cfg.id();
    Ranker ranker(model, catalog, nds, cfg.eval_scoring);

    std::vector<Ranking> rankings;
    std::map<std::int64_t, std::map<std::string, double>> request_scores;
    std::map<std::string, TitleReport> titles;
    for (const auto& a : ranker.arms()) titles[a.title_id] = TitleReport{};
    for (std::size_t i = 0; i < eval_log.rows.size();) {
        const auto& first = eval_log.rows[i];
        SplitMix64 rng(derive_seed(cfg.model_seed, {stream::evaluation, static_cast<std::uint64_t>(run_index),
                                                    static_cast<std::uint64_t>(first.request_id)}));
        auto scored = ranker.rank(first.timestamp, rng);
        Ranking r;
        auto& scores = request_scores[first.request_id];
        for (const auto& s : scored) {
            r.push_back(s.title_id);
            scores[s.title_id] = s.score;
        }
        rankings.push_back(std::move(r));
        for (; i < eval_log.rows.size() && eval_log.rows[i].request_id == first.request_id; ++i) {
            auto& t = titles.at(eval_log.rows[i].title_id);
            t.impressions += 1.0;
            if (eval_log.rows[i].streamed) t.positive_rewards += 1.0;
        }
    }

    SplitMix64 ds_rng(derive_seed(cfg.data_seed, {stream::downsample, stream::eval_users,
                                                  static_cast<std::uint64_t>(run_index + 1)}));
    auto pairs = downsample(eval_log.rows, cfg.negatives_per_positive, ds_rng);
    if (pairs.no_positives) report.warnings.push_back("evaluation window has no positive rewards");
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : pairs.pairs) {
        scores.push_back(request_scores.at(p.request_id).at(p.title_id));
        labels.push_back(p.streamed ? 1 : 0);
    }
    report.roc_auc = roc_auc<double, int>(scores, labels);
    report.pr_auc = pr_auc<double, int>(scores, labels);

    std::vector<std::string> ids;
    for (const auto& [id, t] : titles) ids.push_back(id);
    const auto sov = top1_sov(rankings, ids);
    std::map<std::string, double> conversion, rewards;
    for (auto& [id, t] : titles) {
        t.top1_sov = sov.at(id);
        t.avg_rank = rankings.empty() ? 0.0 : avg_rank(rankings, id);
        t.conversion_rate = t.impressions > 0.0 ? t.positive_rewards / t.impressions : 0.0;
        conversion[id] = t.conversion_rate;
        rewards[id] = t.positive_rewards;
    }
    report.ndcg_conversion = ndcg_sov_alignment(sov, conversion);
    report.ndcg_positive_rewards = ndcg_sov_alignment(sov, rewards);
    report.titles = std::move(titles);
    return report;
}

// ---------------------------------------------------------------------------
// Artifact layout

namespace artifacts {

inline std::string run_dir_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run_%04d", k);
    return buf;
}

inline std::string window_name(int k, const char* pool) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "window_%04d_%s.csv", k, pool);
    return buf;
}

inline fs::path run_dir(const fs::path& root, int k) { return root / "runs" / run_dir_name(k); }

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw bandit_error("io_error", "cannot write '" + path.string() + "'");
        out << text;
        if (!out) throw bandit_error("io_error", "failed writing '" + path.string() + "'");
    }
    fs::rename(tmp, path);
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw bandit_error("io_error", "cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw bandit_error("io_error", "malformed JSON in '" + path.string() + "': " + e.what());
    }
}

inline bool run_complete(const fs::path& root, int k) {
    const auto dir = run_dir(root, k);
    return fs::exists(dir / "report.json") && fs::exists(dir / "checkpoint.json") && fs::exists(dir / "nds.json");
}

inline std::string format_optional(const std::optional<double>& v) { return v ? csv::format(*v) : std::string{}; }

inline const std::vector<std::string>& reports_header() {
    static const std::vector<std::string> h{"run_index", "config_id", "metric", "value"};
    return h;
}

inline const std::vector<std::string>& titles_header() {
    static const std::vector<std::string> h{"run_index", "config_id",        "title_id",         "top1_sov",
                                            "avg_rank",  "conversion_rate", "positive_rewards", "impressions"};
    return h;
}

inline std::string reports_csv(const std::vector<RunReport>& reports) {
    std::ostringstream out;
    csv::Writer w(out);
    w.row(reports_header());
    for (const auto& r : reports)
        for (const auto& m : report_metrics())
            w.row({std::to_string(r.run_index), r.config_id, m, format_optional(r.metric(m))});
    return out.str();
}

inline std::string titles_csv(const std::vector<RunReport>& reports) {
    std::ostringstream out;
    csv::Writer w(out);
    w.row(titles_header());
    for (const auto& r : reports)
        for (const auto& [id, t] : r.titles)
            w.row({std::to_string(r.run_index), r.config_id, id, csv::format(t.top1_sov), csv::format(t.avg_rank),
                   csv::format(t.conversion_rate), csv::format(t.positive_rewards), csv::format(t.impressions)});
    return out.str();
}

inline std::string weights_csv(const FeatureSchema& schema, const std::vector<WeightSnapshot>& trajectory) {
    std::ostringstream out;
    csv::Writer w(out);
    w.row(weight_history_header());
    for (const auto& snap : trajectory) write_weight_rows(w, schema, snap);
    return out.str();
}

inline json summary_json(const ExperimentConfig& cfg, const SimScenario& scenario,
                         const std::vector<RunReport>& reports, bool complete) {
    json metrics = json::object();
    for (const auto& m : report_metrics()) {
        std::vector<double> v;
        for (const auto& r : reports)
            if (auto x = r.metric(m)) v.push_back(*x);
        json entry{{"defined_runs", v.size()}};
        if (!v.empty()) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            std::sort(v.begin(), v.end());
            const auto n = v.size();
            const double median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
            entry["mean"] = mean;
            entry["median"] = median;
        }
        metrics[m] = entry;
    }
    return json{{"config_id", cfg.id()},
                {"variant", cfg.variant},
                {"scenario", scenario.id},
                {"data_seed", cfg.data_seed},
                {"model_seed", cfg.model_seed},
                {"n_runs", cfg.n_runs},
                {"completed_runs", reports.size()},
                {"complete", complete},
                {"focus_titles", scenario.focus_titles},
                {"study_runs", scenario.study_runs},
                {"metrics", metrics}};
}

}  // namespace artifacts

// ---------------------------------------------------------------------------

// Closed-loop experiment. Run k trains on window k (served by the model of
// run k-1, or a uniform random policy for k = 0), then serves window k+1 and
// is evaluated on that window's held-out users. With an output directory,
// every run is checkpointed and a partial directory with the same config is
// resumed from its last completed run.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunControl& control = {}) {
    cfg.validate();
    const auto scenario = cfg.resolve_scenario();
    const auto schema = cfg.schema(scenario);
    const auto flags = cfg.flags();
    const bool persist = !cfg.output_dir.empty();
    const fs::path root = cfg.output_dir;
    const json config_doc = cfg;
    // where the directory lives is not part of its identity
    json identity = config_doc;
    identity.erase("output_dir");
    const auto clock0 = RunClock::first(scenario.start_hour, cfg.period);

    ExperimentResult result;
    result.config = cfg;
    result.schema = schema;

    ModelState model(schema, cfg.prior_variance, std::max<std::size_t>(cfg.history_depth, static_cast<std::size_t>(cfg.smoothing.q)));
    NdsTable nds(scenario.start_hour, cfg.slot_hours);
    int first_run = 0;

    if (persist) {
        if (fs::exists(root / "config.json")) {
            auto stored = artifacts::read_json(root / "config.json");
            stored.erase("output_dir");
            if (stored != identity)
                throw bandit_error("config_mismatch", "'" + root.string() + "' holds an experiment with a different config");
            int last = -1;
            while (last + 1 < cfg.n_runs && artifacts::run_complete(root, last + 1)) ++last;
            for (int k = 0; k <= last; ++k) {
                const auto dir = artifacts::run_dir(root, k);
                result.reports.push_back(artifacts::read_json(dir / "report.json").get<RunReport>());
                auto state = restore(artifacts::read_json(dir / "checkpoint.json"), schema);
                result.trajectory.push_back(WeightSnapshot{k, state.mean()});
                if (k == last) {
                    model = std::move(state);
                    nds = artifacts::read_json(dir / "nds.json").get<NdsTable>();
                }
            }
            first_run = last + 1;
            if (first_run > 0) result.resumed_at = first_run;
        } else {
            fs::create_directories(root);
            artifacts::write_json(root / "config.json", config_doc);
            artifacts::write_json(root / "scenario.json", scenario);
        }
        fs::remove(root / "failure.json");
        fs::remove(root / "COMPLETE");
    }

    int current = first_run;
    try {
        // Logs of the window the next run trains on.
        WindowLogs pending;
        Catalog catalog = scenario.catalog_at(clock0.at(first_run).window_start());
        model.sync_arms(catalog);
        if (first_run == 0) {
            pending = simulate_window(scenario, clock0, catalog, uniform_random_policy(catalog));
        } else {
            pending = simulate_window(scenario, clock0.at(first_run), catalog, thompson_policy(model, catalog, nds));
        }
        if (persist && cfg.write_logs && first_run == 0) {
            std::ostringstream tr, ev;
            write_log_csv(tr, pending.train.rows);
            write_log_csv(ev, pending.eval.rows);
            artifacts::write_text(root / "windows" / artifacts::window_name(0, "train"), tr.str());
            artifacts::write_text(root / "windows" / artifacts::window_name(0, "eval"), ev.str());
        }

        int executed = 0;
        for (int k = first_run; k < cfg.n_runs; ++k) {
            if (control.max_runs >= 0 && executed >= control.max_runs) break;
            current = k;
            const auto clock = clock0.at(k);
            RunReport pending_warnings;

            // train on window k
            SplitMix64 ds_rng(derive_seed(cfg.data_seed, {stream::downsample, stream::train_users, static_cast<std::uint64_t>(k)}));
            auto sampled = downsample(pending.train.rows, cfg.negatives_per_positive, ds_rng);
            if (sampled.no_positives) pending_warnings.warnings.push_back("training window has no positive rewards");
            std::vector<TrainingExample> examples;
            examples.reserve(sampled.pairs.size());
            for (const auto& imp : sampled.pairs)
                examples.push_back(to_example(imp, catalog.at(imp.title_id), nds, cfg.binning));
            auto organic = examples;
            if (flags.augmentation)
                examples = augment(examples, AugmentConfig{cfg.alpha, flags.beta_stage ? cfg.beta : 0.0,
                                                           derive_seed(cfg.model_seed, {stream::augment, static_cast<std::uint64_t>(k)})});
            auto train_cfg = cfg.train;
            train_cfg.rng_seed = derive_seed(cfg.model_seed, {stream::trainer, static_cast<std::uint64_t>(k)});
            auto smooth_cfg = cfg.smoothing;
            if (!flags.regularization) smooth_cfg.lambda = 0.0;
            model = train_incremental(model, TrainingSet{schema.fingerprint(), examples}, train_cfg, smooth_cfg);

            // signals and catalog for window k+1
            const auto next_clock = clock.next();
            Catalog next_catalog = scenario.catalog_at(next_clock.window_start());
            NdsTable next_nds = build_nds_table({&pending.train, &pending.eval}, next_catalog, clock.run_hour, cfg.slot_hours);
            if (!attach_training_stats(next_nds, organic, nds))
                pending_warnings.warnings.push_back("no temporal-signal history; cold-start fills default to 0");
            model.sync_arms(next_catalog);

            WindowLogs next = simulate_window(scenario, next_clock, next_catalog, thompson_policy(model, next_catalog, next_nds));
            auto report = evaluate_run(cfg, k, model, next_catalog, next_nds, next.eval);
            report.warnings.insert(report.warnings.begin(), pending_warnings.warnings.begin(), pending_warnings.warnings.end());

            if (persist) {
                const auto dir = artifacts::run_dir(root, k);
                if (cfg.write_logs) {
                    std::ostringstream tr, ev;
                    write_log_csv(tr, next.train.rows);
                    write_log_csv(ev, next.eval.rows);
                    artifacts::write_text(root / "windows" / artifacts::window_name(k + 1, "train"), tr.str());
                    artifacts::write_text(root / "windows" / artifacts::window_name(k + 1, "eval"), ev.str());
                }
                if (cfg.write_training_sets) {
                    std::ostringstream out;
                    write_augmented_csv(out, examples);
                    artifacts::write_text(dir / "training_set.csv", out.str());
                }
                artifacts::write_json(dir / "checkpoint.json", checkpoint(model, identity));
                artifacts::write_json(dir / "nds.json", next_nds);
                artifacts::write_json(dir / "report.json", report);
            }
            result.reports.push_back(std::move(report));
            result.trajectory.push_back(WeightSnapshot{k, model.mean()});

            pending = std::move(next);
            catalog = std::move(next_catalog);
            nds = std::move(next_nds);
            ++executed;
        }
    } catch (const bandit_error& e) {
        if (persist)
            artifacts::write_json(root / "failure.json",
                                  json{{"error", e.code()}, {"message", e.what()}, {"run_index", current}});
        throw;
    } catch (const std::exception& e) {
        if (persist)
            artifacts::write_json(root / "failure.json",
                                  json{{"error", "internal"}, {"message", e.what()}, {"run_index", current}});
        throw;
    }

    result.complete = static_cast<int>(result.reports.size()) == cfg.n_runs;
    if (persist && result.complete) {
        artifacts::write_text(root / "reports.csv", artifacts::reports_csv(result.reports));
        artifacts::write_text(root / "titles.csv", artifacts::titles_csv(result.reports));
        artifacts::write_text(root / "weights.csv", artifacts::weights_csv(schema, result.trajectory));
        artifacts::write_json(root / "summary.json", artifacts::summary_json(cfg, scenario, result.reports, true));
        artifacts::write_text(root / "COMPLETE", "");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reading finished experiments back

struct ExperimentDir {
    fs::path root;
    ExperimentConfig config;
    SimScenario scenario;
    std::vector<RunReport> reports;
};

inline ExperimentDir load_experiment(const fs::path& root) {
    if (!fs::exists(root / "config.json"))
        throw bandit_error("not_an_experiment", "'" + root.string() + "' has no config.json");
    ExperimentDir dir;
    dir.root = root;
    dir.config = artifacts::read_json(root / "config.json").get<ExperimentConfig>();
    dir.scenario = artifacts::read_json(root / "scenario.json").get<SimScenario>();
    for (int k = 0; k < dir.config.n_runs && artifacts::run_complete(root, k); ++k)
        dir.reports.push_back(artifacts::read_json(artifacts::run_dir(root, k) / "report.json").get<RunReport>());
    return dir;
}

struct CaseStudyRow {
    int run_index = 0;
    std::string config_id;
    std::string title_id;
    double avg_rank = 0.0;
    double baseline_avg_rank = 0.0;
    std::optional<double> avg_rank_gain;
    double top1_sov = 0.0;
    double baseline_top1_sov = 0.0;
    std::optional<double> top1_sov_gain;
};

struct ComparisonResult {
    std::map<std::string, std::map<std::string, RelativeGainSeries>> gains;  // config -> metric -> series
    std::vector<CaseStudyRow> case_study;
    std::vector<fs::path> files;
};

inline void check_comparable(const ExperimentDir& a, const ExperimentDir& b) {
    if (a.scenario.id != b.scenario.id)
        throw bandit_error("scenario_mismatch", "cannot compare scenario '" + a.scenario.id + "' with '" + b.scenario.id + "'");
    if (a.config.data_seed != b.config.data_seed || a.config.model_seed != b.config.model_seed)
        throw bandit_error("seed_mismatch", "compared experiments must share data and model seeds");
    if (a.config.n_runs != b.config.n_runs || a.reports.size() != b.reports.size())
        throw bandit_error("misaligned_runs", "compared experiments cover different runs");
}

// Relative gains of each experiment over `baseline`, written as one CSV per
// metric plus a per-title case-study table into `out_dir` when non-empty.
inline ComparisonResult compare(const fs::path& baseline_dir, const std::vector<fs::path>& dirs, const fs::path& out_dir = {},
                                std::vector<std::string> focus_titles = {}) {
    const auto base = load_experiment(baseline_dir);
    std::vector<ExperimentDir> others;
    for (const auto& d : dirs) {
        others.push_back(load_experiment(d));
        check_comparable(base, others.back());
    }
    if (focus_titles.empty()) focus_titles = base.scenario.focus_titles;
    std::vector<int> runs = base.scenario.study_runs;
    if (runs.empty())
        for (const auto& r : base.reports) runs.push_back(r.run_index);

    ComparisonResult result;
    for (const auto& other : others)
        for (const auto& m : report_metrics())
            result.gains[other.config.id()][m] = relative_gain(metric_series(other.reports, m), metric_series(base.reports, m));

    for (const auto& other : others)
        for (int run : runs) {
            if (run < 0 || run >= static_cast<int>(base.reports.size())) continue;
            const auto& rb = base.reports[static_cast<std::size_t>(run)];
            const auto& ro = other.reports[static_cast<std::size_t>(run)];
            for (const auto& title : focus_titles) {
                auto ib = rb.titles.find(title);
                auto io = ro.titles.find(title);
                if (ib == rb.titles.end() || io == ro.titles.end()) continue;
                result.case_study.push_back(CaseStudyRow{run, other.config.id(), title, io->second.avg_rank,
                                                         ib->second.avg_rank,
                                                         relative_gain(io->second.avg_rank, ib->second.avg_rank),
                                                         io->second.top1_sov, ib->second.top1_sov,
                                                         relative_gain(io->second.top1_sov, ib->second.top1_sov)});
            }
        }

    if (!out_dir.empty()) {
        for (const auto& m : report_metrics()) {
            std::ostringstream out;
            csv::Writer w(out);
            w.row({"run_index", "config_id", "baseline_id", "value", "baseline_value", "relative_gain"});
            for (const auto& other : others) {
                const auto& series = result.gains[other.config.id()][m];
                for (std::size_t i = 0; i < series.size(); ++i)
                    w.row({std::to_string(series[i].run_index), other.config.id(), base.config.id(),
                           artifacts::format_optional(other.reports[i].metric(m)),
                           artifacts::format_optional(base.reports[i].metric(m)),
                           artifacts::format_optional(series[i].value)});
            }
            const auto path = out_dir / ("gain_" + m + ".csv");
            artifacts::write_text(path, out.str());
            result.files.push_back(path);
        }
        std::ostringstream out;
        csv::Writer w(out);
        w.row({"run_index", "config_id", "baseline_id", "title_id", "avg_rank", "baseline_avg_rank", "avg_rank_gain",
               "top1_sov", "baseline_top1_sov", "top1_sov_gain"});
        for (const auto& row : result.case_study)
            w.row({std::to_string(row.run_index), row.config_id, base.config.id(), row.title_id, csv::format(row.avg_rank),
                   csv::format(row.baseline_avg_rank), artifacts::format_optional(row.avg_rank_gain),
                   csv::format(row.top1_sov), csv::format(row.baseline_top1_sov),
                   artifacts::format_optional(row.top1_sov_gain)});
        const auto path = out_dir / "case_study.csv";
        artifacts::write_text(path, out.str());
        result.files.push_back(path);
    }
    return result;
}

// Writes weights.csv (run_index, feature_name, weight) from every run checkpoint.
inline fs::path export_weights(const fs::path& root, fs::path out = {}) {
    const auto dir = load_experiment(root);
    std::vector<WeightSnapshot> trajectory;
    std::optional<FeatureSchema> schema;
    for (int k = 0; k < dir.config.n_runs && artifacts::run_complete(root, k); ++k) {
        auto state = restore(artifacts::read_json(artifacts::run_dir(root, k) / "checkpoint.json"));
        if (!schema) schema = state.schema();
        else if (state.fingerprint() != schema->fingerprint())
            throw bandit_error("schema_mismatch", "checkpoints of one experiment disagree on the schema");
        trajectory.push_back(WeightSnapshot{k, state.mean()});
    }
    if (!schema) throw bandit_error("no_checkpoints", "'" + root.string() + "' has no completed runs");
    if (out.empty()) out = root / "weights.csv";
    artifacts::write_text(out, artifacts::weights_csv(*schema, trajectory));
    return out;
}

}  // namespace robust_bandit
