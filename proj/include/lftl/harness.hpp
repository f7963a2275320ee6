#pragma once

// End-to-end orchestration: source pretraining, the R-round query-and-adapt
// alternation, the simulated oracle, metrics, config parsing and artifact
// output (metrics.csv, selections.csv, losses.csv, embeddings.csv, model.ckpt).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lftl/adaptation.hpp"
#include "lftl/domains.hpp"
#include "lftl/model.hpp"
#include "lftl/sampling.hpp"
#include "lftl/tensor.hpp"

namespace lftl {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TargetPool {
    std::vector<int> unlabeled;   // T_u, ascending
    std::map<int, int> labeled;   // T_l: id -> oracle label
    int round = 0;

    int total() const { return static_cast<int>(unlabeled.size() + labeled.size()); }
};

struct Oracle {
    std::map<int, int> truth;
    int label_of(int id) const { return truth.at(id); }
};

struct PretrainConfig {
    int epochs = 60;
    int batch_size = 64;
    double eta0 = 0.05;
    double val_fraction = 0.1;
};

struct DatasetConfig {
    std::string kind = "gaussian_ring";  // gaussian_ring | two_moons | csv
    DomainSpec spec;
    std::string source_csv;
    std::string target_csv;
    bool csv_has_header = false;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    double budget = 0.05;  // fraction of the pool when < 1, else a count
    int rounds = 10;
    CasConfig cas;
    LossWeights weights;
    AdaptConfig adapt;
    double eta0 = 0.01;
    uint64_t seed = 0;
    std::string strategy = "cas";
    PretrainConfig pretrain;
    ModelDims model;  // input_dim/classes filled from the dataset
    bool freeze_classifier = false;
    bool eval_on_pool = false;
    double test_fraction = 0.2;
    bool reset_lr_each_round = false;
    bool export_embeddings = false;
    bool audit_prob_cache = false;
};

struct RoundMetrics {
    int round = 0;
    double mean_acc = 0.0;
    std::vector<double> per_class_acc;
    int labeled_count = 0;
    double seconds = 0.0;
};

// ---- config JSON ----

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const char* where,
                           const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError(std::string("config: unknown key '") + key + "' in " +
                              where);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    detail::reject_unknown(
        j, "root",
        {"dataset", "budget", "rounds", "cas", "weights", "adapt", "eta0", "seed",
         "strategy", "pretrain", "model", "freeze_classifier", "eval_on_pool",
         "test_fraction", "reset_lr_each_round", "export_embeddings",
         "audit_prob_cache"});
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            detail::reject_unknown(
                d, "dataset",
                {"kind", "classes", "n_source", "n_target", "rotation_deg",
                 "noise_scale_source", "noise_scale_target", "class_priors_target",
                 "source_csv", "target_csv", "has_header"});
            cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
            cfg.dataset.spec.classes = d.value("classes", cfg.dataset.spec.classes);
            cfg.dataset.spec.n_source = d.value("n_source", cfg.dataset.spec.n_source);
            cfg.dataset.spec.n_target = d.value("n_target", cfg.dataset.spec.n_target);
            cfg.dataset.spec.rotation =
                d.value("rotation_deg", 0.0) * std::numbers::pi / 180.0;
            cfg.dataset.spec.noise_scale_source =
                d.value("noise_scale_source", cfg.dataset.spec.noise_scale_source);
            cfg.dataset.spec.noise_scale_target =
                d.value("noise_scale_target", cfg.dataset.spec.noise_scale_target);
            if (d.contains("class_priors_target"))
                cfg.dataset.spec.class_priors_target =
                    d.at("class_priors_target").get<std::vector<double>>();
            cfg.dataset.source_csv = d.value("source_csv", "");
            cfg.dataset.target_csv = d.value("target_csv", "");
            cfg.dataset.csv_has_header = d.value("has_header", false);
        }
        cfg.budget = j.value("budget", cfg.budget);
        cfg.rounds = j.value("rounds", cfg.rounds);
        if (j.contains("cas")) {
            const auto& c = j.at("cas");
            detail::reject_unknown(c, "cas", {"alpha", "lambda", "kappa"});
            cfg.cas.alpha = c.value("alpha", cfg.cas.alpha);
            cfg.cas.lambda = c.value("lambda", cfg.cas.lambda);
            cfg.cas.kappa = c.value("kappa", cfg.cas.kappa);
        }
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            detail::reject_unknown(w, "weights", {"beta1", "beta2"});
            cfg.weights.beta1 = w.value("beta1", cfg.weights.beta1);
            cfg.weights.beta2 = w.value("beta2", cfg.weights.beta2);
        }
        if (j.contains("adapt")) {
            const auto& a = j.at("adapt");
            detail::reject_unknown(a, "adapt",
                                   {"epochs_per_round", "batch_size", "mixup",
                                    "mixup_beta", "vault_cadence", "tau"});
            cfg.adapt.epochs_per_round =
                a.value("epochs_per_round", cfg.adapt.epochs_per_round);
            cfg.adapt.batch_size = a.value("batch_size", cfg.adapt.batch_size);
            cfg.adapt.mixup_enabled = a.value("mixup", cfg.adapt.mixup_enabled);
            cfg.adapt.mixup_beta = a.value("mixup_beta", cfg.adapt.mixup_beta);
            std::string cad = a.value("vault_cadence", std::string("epoch"));
            if (cad == "epoch")
                cfg.adapt.vault_cadence = VaultCadence::PerEpoch;
            else if (cad == "step")
                cfg.adapt.vault_cadence = VaultCadence::PerStep;
            else
                throw ConfigError("config: vault_cadence must be 'epoch' or 'step'");
            cfg.adapt.tau = a.value("tau", cfg.adapt.tau);
        }
        cfg.eta0 = j.value("eta0", cfg.eta0);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.strategy = j.value("strategy", cfg.strategy);
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            detail::reject_unknown(p, "pretrain",
                                   {"epochs", "batch_size", "eta0", "val_fraction"});
            cfg.pretrain.epochs = p.value("epochs", cfg.pretrain.epochs);
            cfg.pretrain.batch_size = p.value("batch_size", cfg.pretrain.batch_size);
            cfg.pretrain.eta0 = p.value("eta0", cfg.pretrain.eta0);
            cfg.pretrain.val_fraction = p.value("val_fraction", cfg.pretrain.val_fraction);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            detail::reject_unknown(m, "model", {"hidden", "bottleneck"});
            if (m.contains("hidden"))
                cfg.model.hidden = m.at("hidden").get<std::vector<int>>();
            cfg.model.bottleneck = m.value("bottleneck", cfg.model.bottleneck);
        }
        cfg.freeze_classifier = j.value("freeze_classifier", cfg.freeze_classifier);
        cfg.eval_on_pool = j.value("eval_on_pool", cfg.eval_on_pool);
        cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
        cfg.reset_lr_each_round = j.value("reset_lr_each_round", cfg.reset_lr_each_round);
        cfg.export_embeddings = j.value("export_embeddings", cfg.export_embeddings);
        cfg.audit_prob_cache = j.value("audit_prob_cache", cfg.audit_prob_cache);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    if (cfg.rounds < 1) throw ConfigError("config: rounds must be >= 1");
    if (cfg.budget <= 0.0) throw ConfigError("config: budget must be positive");
    if (cfg.test_fraction < 0.0 || cfg.test_fraction >= 1.0)
        throw ConfigError("config: test_fraction must lie in [0,1)");
    bool known = cfg.strategy == "cas";
    for (const auto& s : baseline_strategy_names()) known = known || cfg.strategy == s;
    if (!known) throw ConfigError("config: unknown strategy '" + cfg.strategy + "'");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    return parse_config(j);
}

// ---- core harness operations ----

// b_k = floor(B/R)+1 for the first B mod R rounds, floor(B/R) after
inline std::vector<int> budget_schedule(int budget, int rounds) {
    if (rounds < 1 || budget < rounds)
        throw std::invalid_argument("budget_schedule: need B >= R >= 1");
    std::vector<int> out(rounds, budget / rounds);
    for (int k = 0; k < budget % rounds; ++k) ++out[k];
    return out;
}

// per-class accuracies plus their unweighted mean over non-empty classes
inline std::pair<double, std::vector<double>> evaluate(const MlpModel& model,
                                                       const LabeledSet& test) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    int classes = model.dims().classes;
    std::vector<int> correct(classes, 0), count(classes, 0);
    Tensor p = model.probs(test.features);
    for (int i = 0; i < test.size(); ++i) {
        int pred = 0;
        for (int c = 1; c < classes; ++c)
            if (p.at(i, c) > p.at(i, pred)) pred = c;
        ++count[test.labels[i]];
        if (pred == test.labels[i]) ++correct[test.labels[i]];
    }
    std::vector<double> per_class(classes, 0.0);
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        if (count[c] > 0) {
            per_class[c] = static_cast<double>(correct[c]) / count[c];
            sum += per_class[c];
            ++present;
        }
    }
    return {present > 0 ? sum / present : 0.0, per_class};
}

// CE + SGD on a seeded 90/10 split; returns the best-validation snapshot
inline MlpModel pretrain_source(const LabeledSet& source, const ModelDims& dims,
                                const PretrainConfig& cfg, uint64_t seed) {
    int n = source.size();
    if (n == 0) throw std::invalid_argument("pretrain_source: empty source set");
    int classes = dims.classes;

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    int n_val = std::max(1, static_cast<int>(std::lround(n * cfg.val_fraction)));
    if (n_val >= n) n_val = n - 1;

    std::vector<int> train_rows, val_rows;
    bool ok = false;
    for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
        std::mt19937_64 split_rng(seed + 7919ull * attempt);
        std::shuffle(order.begin(), order.end(), split_rng);
        train_rows.assign(order.begin() + n_val, order.end());
        val_rows.assign(order.begin(), order.begin() + n_val);
        std::vector<bool> seen(classes, false);
        for (int r : train_rows) seen[source.labels[r]] = true;
        ok = std::all_of(seen.begin(), seen.end(), [](bool v) { return v; });
    }
    if (!ok)
        throw std::runtime_error(
            "pretrain_source: could not find a split covering every class");

    auto gather = [&](const std::vector<int>& rows) {
        LabeledSet s;
        s.features = Tensor(static_cast<int>(rows.size()), source.dim());
        for (size_t i = 0; i < rows.size(); ++i) {
            for (int j = 0; j < source.dim(); ++j)
                s.features.at(static_cast<int>(i), j) = source.features.at(rows[i], j);
            s.labels.push_back(source.labels[rows[i]]);
            s.ids.push_back(source.ids[rows[i]]);
        }
        return s;
    };
    LabeledSet train = gather(train_rows), val = gather(val_rows);
    Tensor q_all = one_hot(train.labels, classes);

    MlpModel model(dims, seed);
    MlpModel best = model;
    double best_acc = -1.0;
    SgdOptimizer opt;
    std::mt19937_64 rng(seed + 1);
    int n_train = train.size();
    std::vector<int> idx(n_train);
    for (int i = 0; i < n_train; ++i) idx[i] = i;
    long total_steps =
        static_cast<long>(cfg.epochs) * ((n_train + cfg.batch_size - 1) / cfg.batch_size);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            int bs = std::min(cfg.batch_size, n_train - start);
            Tensor xb(bs, train.dim()), qb(bs, classes);
            for (int i = 0; i < bs; ++i) {
                int r = idx[start + i];
                for (int j = 0; j < train.dim(); ++j)
                    xb.at(i, j) = train.features.at(r, j);
                for (int c = 0; c < classes; ++c) qb.at(i, c) = q_all.at(r, c);
            }
            Tape tape;
            auto vars = model.bind(tape);
            Tape::Var probs = tape.softmax_rows(
                model.logits_on(tape, vars, tape.leaf(xb)));
            Tape::Var loss = ce_loss_on(tape, probs, qb);
            tape.backward(loss);
            std::vector<Tensor> grads;
            for (Tape::Var v : vars.all()) grads.push_back(tape.grad(v));
            double p = total_steps > 1
                           ? static_cast<double>(step) / static_cast<double>(total_steps - 1)
                           : 0.0;
            opt.step(model, grads, lr_at(cfg.eta0, p));
            ++step;
        }
        double acc = evaluate(model, val).first;
        if (acc > best_acc) {
            best_acc = acc;
            best = model;
        }
    }
    return best;
}

// ---- experiment driver ----

struct ExperimentResult {
    std::vector<RoundMetrics> metrics;
    MlpModel final_model;
};

namespace detail {

struct SelectionRow {
    int round;
    int id;
    double u_cm, u_ct, u;
    int y_a;
    int true_label;
};

inline LabeledSet subset_by_rows(const LabeledSet& set, const std::vector<int>& rows) {
    LabeledSet out;
    out.features = Tensor(static_cast<int>(rows.size()), set.dim());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < set.dim(); ++j)
            out.features.at(static_cast<int>(i), j) = set.features.at(rows[i], j);
        out.labels.push_back(set.labels[rows[i]]);
        out.ids.push_back(set.ids[rows[i]]);
    }
    return out;
}

}  // namespace detail

inline std::pair<LabeledSet, LabeledSet> make_domains(const DatasetConfig& dc) {
    if (dc.kind == "gaussian_ring") return gen_gaussian_ring(dc.spec);
    if (dc.kind == "two_moons") return gen_two_moons_shift(dc.spec);
    if (dc.kind == "csv") {
        CsvSchema schema{dc.spec.classes, dc.csv_has_header};
        return {load_csv(dc.source_csv, schema), load_csv(dc.target_csv, schema)};
    }
    throw ConfigError("config: unknown dataset kind '" + dc.kind + "'");
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::string& out_dir,
                                       const MlpModel* pretrained = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    auto [source, target] = make_domains(cfg.dataset);
    ModelDims dims = cfg.model;
    dims.input_dim = source.dim();
    dims.classes = cfg.dataset.spec.classes;

    // split the target domain into an adaptation pool and a held-out test set
    int n_t = target.size();
    std::vector<int> rows(n_t);
    for (int i = 0; i < n_t; ++i) rows[i] = i;
    std::mt19937_64 split_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(rows.begin(), rows.end(), split_rng);
    int n_test = cfg.eval_on_pool
                     ? 0
                     : static_cast<int>(std::lround(n_t * cfg.test_fraction));
    std::vector<int> test_rows(rows.begin(), rows.begin() + n_test);
    std::vector<int> pool_rows(rows.begin() + n_test, rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    std::sort(pool_rows.begin(), pool_rows.end());
    LabeledSet pool_set = detail::subset_by_rows(target, pool_rows);
    LabeledSet test_set = cfg.eval_on_pool ? pool_set
                                           : detail::subset_by_rows(target, test_rows);

    // resolve budget (fraction of the pool rounds half-up)
    int budget = cfg.budget < 1.0
                     ? static_cast<int>(std::floor(cfg.budget * pool_set.size() + 0.5))
                     : static_cast<int>(std::lround(cfg.budget));
    if (budget < cfg.rounds)
        throw ConfigError("config: budget resolves below the round count");
    if (budget > pool_set.size())
        throw ConfigError("config: budget exhausts the target pool");
    std::vector<int> schedule = budget_schedule(budget, cfg.rounds);

    MlpModel model = pretrained
                         ? *pretrained
                         : pretrain_source(source, dims, cfg.pretrain, cfg.seed);
    if (!(model.dims() == dims))
        throw ConfigError("config: checkpoint dims do not match the dataset");

    Oracle oracle;
    for (int i = 0; i < pool_set.size(); ++i)
        oracle.truth[pool_set.ids[i]] = pool_set.labels[i];
    std::map<int, int> row_of;  // pool id -> row in pool_set
    for (int i = 0; i < pool_set.size(); ++i) row_of[pool_set.ids[i]] = i;

    TargetPool pool;
    pool.unlabeled = pool_set.ids;

    PersistenceVault vault(0.9);
    SgdOptimizer opt;
    std::mt19937_64 adapt_rng(cfg.seed ^ 0x2545f4914f6cdd1dull);

    ProgressClock clock;
    {
        long steps = 0;
        int labeled = 0;
        for (int r = 0; r < cfg.rounds; ++r) {
            labeled += schedule[r];
            steps += static_cast<long>(cfg.adapt.epochs_per_round) *
                     ((labeled + cfg.adapt.batch_size - 1) / cfg.adapt.batch_size);
        }
        clock.total_steps = steps;
    }

    std::map<int, std::vector<double>> prev_probs;  // p^(r-1) cache
    std::optional<MlpModel> prev_snapshot;          // for the cache audit
    std::vector<detail::SelectionRow> selection_log;
    std::vector<StepTrace> loss_log;
    std::vector<RoundMetrics> metrics;

    for (int r = 0; r < cfg.rounds; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        int b = schedule[r];

        LabeledSet unl = detail::subset_by_rows(
            pool_set, [&] {
                std::vector<int> rs;
                for (int id : pool.unlabeled) rs.push_back(row_of.at(id));
                return rs;
            }());
        Tensor probs_u = model.probs(unl.features);
        Tensor feats_u = model.features(unl.features);

        if (cfg.audit_prob_cache && prev_snapshot) {
            std::mt19937_64 audit_rng(cfg.seed + 31ull * r);
            std::vector<int> pick(unl.ids.size());
            for (size_t i = 0; i < pick.size(); ++i) pick[i] = static_cast<int>(i);
            std::shuffle(pick.begin(), pick.end(), audit_rng);
            pick.resize(std::min<size_t>(32, pick.size()));
            for (int row : pick) {
                Tensor one(1, unl.dim());
                for (int j = 0; j < unl.dim(); ++j) one.at(0, j) = unl.features.at(row, j);
                Tensor p = prev_snapshot->probs(one);
                const auto& cached = prev_probs.at(unl.ids[row]);
                for (int c = 0; c < p.cols(); ++c)
                    if (std::abs(p.at(0, c) - cached[c]) > 1e-9)
                        throw std::runtime_error("prob cache audit failed");
            }
        }

        std::vector<int> picked;
        if (cfg.strategy == "cas") {
            HypothesisLog hlog;
            hlog.round = r;
            for (int i = 0; i < unl.size(); ++i)
                hlog.probs_current[unl.ids[i]] = probs_u.row(i);
            if (r > 0) hlog.probs_prev = prev_probs;
            CasConfig cc = cfg.cas;
            cc.b = b;
            auto scores = cas_scores(hlog, cc, dims.classes);
            picked = select_queries(scores, b);
            std::map<int, SampleScore> by_id;
            for (const auto& s : scores) by_id[s.id] = s;
            for (int id : picked)
                selection_log.push_back({r + 1, id, by_id[id].u_cm, by_id[id].u_ct_of_ya,
                                         by_id[id].u, by_id[id].y_a,
                                         oracle.label_of(id)});
        } else {
            BaselinePool bp;
            bp.ids = unl.ids;
            bp.probs = probs_u;
            bp.features = feats_u;
            std::vector<int> l_rows;
            for (const auto& [id, lab] : pool.labeled) l_rows.push_back(row_of.at(id));
            bp.labeled_features =
                l_rows.empty() ? Tensor(0, feats_u.cols())
                               : model.features(
                                     detail::subset_by_rows(pool_set, l_rows).features);
            picked = baseline_select(cfg.strategy, bp, b, cfg.seed + 97ull * r);
            for (int id : picked) {
                int row = static_cast<int>(std::find(unl.ids.begin(), unl.ids.end(), id) -
                                           unl.ids.begin());
                int y_a = 0;
                for (int c = 1; c < dims.classes; ++c)
                    if (probs_u.at(row, c) > probs_u.at(row, y_a)) y_a = c;
                selection_log.push_back({r + 1, id, 0.0, 0.0, 0.0, y_a,
                                         oracle.label_of(id)});
            }
        }

        // oracle labels + vault admission with pre-adaptation features
        std::sort(picked.begin(), picked.end());
        Tensor picked_feats(static_cast<int>(picked.size()), feats_u.cols());
        for (size_t i = 0; i < picked.size(); ++i) {
            int row = static_cast<int>(
                std::find(unl.ids.begin(), unl.ids.end(), picked[i]) - unl.ids.begin());
            for (int j = 0; j < feats_u.cols(); ++j)
                picked_feats.at(static_cast<int>(i), j) = feats_u.at(row, j);
        }
        vault.admit(picked, picked_feats);
        for (int id : picked) {
            pool.labeled[id] = oracle.label_of(id);
            pool.unlabeled.erase(
                std::find(pool.unlabeled.begin(), pool.unlabeled.end(), id));
        }
        pool.round = r + 1;

        std::vector<int> labeled_rows, labeled_ids;
        std::vector<int> labels;
        for (const auto& [id, lab] : pool.labeled) {
            labeled_rows.push_back(row_of.at(id));
            labeled_ids.push_back(id);
            labels.push_back(lab);
        }
        LabeledSet lab_set = detail::subset_by_rows(pool_set, labeled_rows);
        std::vector<int> unl_rows;
        for (int id : pool.unlabeled) unl_rows.push_back(row_of.at(id));
        LabeledSet unl_set = detail::subset_by_rows(pool_set, unl_rows);

        if (cfg.reset_lr_each_round) clock = ProgressClock{0, clock.total_steps / cfg.rounds};
        RoundStats stats =
            adapt_round(model, opt, lab_set.features, labels, labeled_ids,
                        unl_set.features, vault, cfg.adapt, cfg.weights, cfg.eta0,
                        clock, adapt_rng, cfg.freeze_classifier);
        loss_log.insert(loss_log.end(), stats.steps.begin(), stats.steps.end());

        // cache p^(r) on the remaining unlabeled pool for the next round
        prev_probs.clear();
        if (!pool.unlabeled.empty()) {
            Tensor p_next = model.probs(unl_set.features);
            for (int i = 0; i < unl_set.size(); ++i)
                prev_probs[unl_set.ids[i]] = p_next.row(i);
        }
        if (cfg.audit_prob_cache) prev_snapshot = model;

        auto [mean_acc, per_class] = evaluate(model, test_set);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();
        metrics.push_back(RoundMetrics{r + 1, mean_acc, per_class,
                                       static_cast<int>(pool.labeled.size()), secs});
    }

    // ---- artifacts ----
    {
        std::ofstream os(out_dir + "/metrics.csv");
        os.precision(12);
        os << "round,mean_acc";
        for (int c = 0; c < dims.classes; ++c) os << ",acc_class_" << c;
        os << ",labeled_count\n";
        for (const auto& m : metrics) {
            os << m.round << "," << m.mean_acc;
            for (double a : m.per_class_acc) os << "," << a;
            os << "," << m.labeled_count << "\n";
        }
    }
    {
        std::ofstream os(out_dir + "/selections.csv");
        os.precision(12);
        os << "round,id,u_cm,u_ct,u,y_a,true_label\n";
        for (const auto& s : selection_log)
            os << s.round << "," << s.id << "," << s.u_cm << "," << s.u_ct << ","
               << s.u << "," << s.y_a << "," << s.true_label << "\n";
    }
    {
        std::ofstream os(out_dir + "/losses.csv");
        os.precision(12);
        os << "step,lr,L_ce,L_vpa,L_ent,L_total\n";
        for (const auto& t : loss_log)
            os << t.step << "," << t.lr << "," << t.ce << "," << t.vpa << ","
               << t.ent << "," << t.total << "\n";
    }
    save_checkpoint(model, out_dir + "/model.ckpt");
    if (cfg.export_embeddings) {
        std::vector<std::pair<std::string, const LabeledSet*>> splits = {
            {"pool", &pool_set}};
        if (!cfg.eval_on_pool) splits.emplace_back("test", &test_set);
        std::ofstream os(out_dir + "/embeddings.csv");
        os.precision(12);
        os << "id,split,true_label";
        for (int k = 0; k < dims.bottleneck; ++k) os << ",f" << k;
        os << "\n";
        for (const auto& [name, set] : splits) {
            Tensor f = model.features(set->features);
            for (int i = 0; i < set->size(); ++i) {
                os << set->ids[i] << "," << name << "," << set->labels[i];
                for (int k = 0; k < f.cols(); ++k) os << "," << f.at(i, k);
                os << "\n";
            }
        }
    }

    return ExperimentResult{std::move(metrics), std::move(model)};
}

// feature dump for external visualization
inline void export_embeddings(const MlpModel& model,
                              const std::vector<std::pair<std::string, LabeledSet>>& sets,
                              const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_embeddings: cannot open " + path);
    os.precision(12);
    os << "id,split,true_label";
    for (int k = 0; k < model.dims().bottleneck; ++k) os << ",f" << k;
    os << "\n";
    for (const auto& [name, set] : sets) {
        Tensor f = model.features(set.features);
        for (int i = 0; i < set.size(); ++i) {
            os << set.ids[i] << "," << name << "," << set.labels[i];
            for (int k = 0; k < f.cols(); ++k) os << "," << f.at(i, k);
            os << "\n";
        }
    }
    if (!os) throw std::runtime_error("export_embeddings: write failed");
}

}  // namespace lftl
