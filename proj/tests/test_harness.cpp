#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lftl/harness.hpp"

using namespace lftl;

namespace {

std::string tmp_dir(const char* name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

// small but non-trivial experiment used by several cases
ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.dataset.kind = "gaussian_ring";
    cfg.dataset.spec.classes = 4;
    cfg.dataset.spec.n_source = 200;
    cfg.dataset.spec.n_target = 200;
    cfg.dataset.spec.rotation = 0.5;
    cfg.dataset.spec.seed = 0;
    cfg.budget = 12.0;
    cfg.rounds = 3;
    cfg.adapt.epochs_per_round = 2;
    cfg.adapt.batch_size = 8;
    cfg.model.hidden = {8};
    cfg.model.bottleneck = 4;
    cfg.pretrain.epochs = 8;
    cfg.seed = 4;
    return cfg;
}

struct SelectionsFile {
    // round -> ids picked that round
    std::map<int, std::vector<int>> by_round;
    std::vector<int> all_ids;
};

SelectionsFile read_selections(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "round,id,u_cm,u_ct,u,y_a,true_label");
    SelectionsFile out;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        int round = std::stoi(cell);
        std::getline(ss, cell, ',');
        int id = std::stoi(cell);
        out.by_round[round].push_back(id);
        out.all_ids.push_back(id);
    }
    return out;
}

}  // namespace

TEST_CASE("budget_schedule splits evenly with the remainder up front") {
    CHECK(budget_schedule(10, 5) == std::vector<int>{2, 2, 2, 2, 2});
    CHECK(budget_schedule(11, 5) == std::vector<int>{3, 2, 2, 2, 2});
    CHECK(budget_schedule(7, 7) == std::vector<int>{1, 1, 1, 1, 1, 1, 1});
    CHECK(budget_schedule(23, 4) == std::vector<int>{6, 6, 6, 5});
    CHECK_THROWS_AS(budget_schedule(3, 5), std::invalid_argument);
    CHECK_THROWS_AS(budget_schedule(3, 0), std::invalid_argument);
}

TEST_CASE("evaluate: perfect and constant predictors, unweighted class mean") {
    // zero weights -> uniform probs -> argmax ties to class 0
    MlpModel m(ModelDims{2, {}, 2, 4}, 1);
    for (Tensor* p : m.parameters())
        for (double& v : p->data()) v = 0.0;
    LabeledSet set;
    set.features = Tensor(8, 2);
    set.labels = {0, 0, 1, 1, 2, 2, 3, 3};
    set.ids = {0, 1, 2, 3, 4, 5, 6, 7};
    auto [mean, per_class] = evaluate(m, set);
    CHECK(mean == doctest::Approx(0.25));
    CHECK(per_class[0] == 1.0);
    CHECK(per_class[1] == 0.0);

    // imbalanced set: the mean weights classes equally, not samples
    LabeledSet imb;
    imb.features = Tensor(5, 2);
    imb.labels = {0, 0, 0, 0, 1};
    imb.ids = {0, 1, 2, 3, 4};
    MlpModel m2(ModelDims{2, {}, 2, 2}, 1);
    for (Tensor* p : m2.parameters())
        for (double& v : p->data()) v = 0.0;
    m2.cls_bias().at(0, 0) = 1.0;  // always predicts class 0
    auto [mean2, pc2] = evaluate(m2, imb);
    CHECK(mean2 == doctest::Approx(0.5));  // (1.0 + 0.0) / 2, not 4/5
    CHECK(pc2[0] == 1.0);
    CHECK(pc2[1] == 0.0);

    LabeledSet empty;
    empty.features = Tensor(0, 2);
    CHECK_THROWS_AS(evaluate(m, empty), std::invalid_argument);
}

TEST_CASE("pretrain_source: separable source reaches high accuracy") {
    DomainSpec spec;
    spec.classes = 3;
    spec.n_source = 300;
    spec.n_target = 30;
    spec.noise_scale_source = 0.05;
    spec.seed = 1;
    auto [src, tgt] = gen_gaussian_ring(spec);
    PretrainConfig pc;
    pc.epochs = 30;
    MlpModel m = pretrain_source(src, ModelDims{2, {16}, 8, 3}, pc, 2);
    CHECK(evaluate(m, src).first > 0.95);
}

TEST_CASE("pretrain_source: deterministic for a fixed seed") {
    DomainSpec spec;
    spec.classes = 3;
    spec.n_source = 120;
    spec.n_target = 30;
    spec.seed = 6;
    auto [src, tgt] = gen_gaussian_ring(spec);
    PretrainConfig pc;
    pc.epochs = 5;
    MlpModel a = pretrain_source(src, ModelDims{2, {8}, 4, 3}, pc, 9);
    MlpModel b = pretrain_source(src, ModelDims{2, {8}, 4, 3}, pc, 9);
    auto pa = std::as_const(a).parameters();
    auto pb = std::as_const(b).parameters();
    for (size_t i = 0; i < pa.size(); ++i)
        for (size_t k = 0; k < pa[i]->size(); ++k)
            CHECK((*pa[i])[k] == (*pb[i])[k]);
}

TEST_CASE("pretrain_source rejects an empty source set") {
    LabeledSet empty;
    empty.features = Tensor(0, 2);
    CHECK_THROWS_AS(pretrain_source(empty, ModelDims{2, {4}, 2, 2}, PretrainConfig{}, 1),
                    std::invalid_argument);
}

TEST_CASE("run_experiment: selection log matches the budget schedule and never repeats") {
    for (const char* strategy : {"cas", "random", "kcenter_greedy"}) {
        CAPTURE(strategy);
        ExperimentConfig cfg = small_config();
        cfg.strategy = strategy;
        std::string dir = tmp_dir("lftl_run_invariants");
        ExperimentResult res = run_experiment(cfg, dir);

        REQUIRE(res.metrics.size() == 3);
        std::vector<int> schedule = budget_schedule(12, 3);
        SelectionsFile sel = read_selections(dir + "/selections.csv");
        int cumulative = 0;
        for (int r = 1; r <= 3; ++r) {
            REQUIRE(static_cast<int>(sel.by_round[r].size()) == schedule[r - 1]);
            cumulative += schedule[r - 1];
            CHECK(res.metrics[r - 1].labeled_count == cumulative);
            CHECK(res.metrics[r - 1].round == r);
            CHECK(res.metrics[r - 1].mean_acc >= 0.0);
            CHECK(res.metrics[r - 1].mean_acc <= 1.0);
        }
        // a pool id, once labeled, is never queried again
        std::set<int> uniq(sel.all_ids.begin(), sel.all_ids.end());
        CHECK(uniq.size() == sel.all_ids.size());
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("run_experiment: prior-round probability cache audit passes") {
    ExperimentConfig cfg = small_config();
    cfg.audit_prob_cache = true;
    std::string dir = tmp_dir("lftl_run_audit");
    CHECK_NOTHROW(run_experiment(cfg, dir));
    std::filesystem::remove_all(dir);
}

TEST_CASE("run_experiment: identical seeds give byte-identical artifacts") {
    ExperimentConfig cfg = small_config();
    cfg.seed = 7;
    std::string d1 = tmp_dir("lftl_run_det_a");
    std::string d2 = tmp_dir("lftl_run_det_b");
    run_experiment(cfg, d1);
    run_experiment(cfg, d2);
    CHECK(slurp(d1 + "/metrics.csv") == slurp(d2 + "/metrics.csv"));
    CHECK(slurp(d1 + "/selections.csv") == slurp(d2 + "/selections.csv"));
    CHECK(slurp(d1 + "/losses.csv") == slurp(d2 + "/losses.csv"));
    CHECK(slurp(d1 + "/model.ckpt") == slurp(d2 + "/model.ckpt"));
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST_CASE("run_experiment: different seeds give different selections") {
    ExperimentConfig cfg = small_config();
    cfg.strategy = "random";
    std::string d1 = tmp_dir("lftl_run_seed_a");
    std::string d2 = tmp_dir("lftl_run_seed_b");
    cfg.seed = 1;
    run_experiment(cfg, d1);
    cfg.seed = 2;
    run_experiment(cfg, d2);
    CHECK(slurp(d1 + "/selections.csv") != slurp(d2 + "/selections.csv"));
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST_CASE("run_experiment: single-round edge case") {
    ExperimentConfig cfg = small_config();
    cfg.rounds = 1;
    cfg.budget = 6.0;
    std::string dir = tmp_dir("lftl_run_r1");
    ExperimentResult res = run_experiment(cfg, dir);
    REQUIRE(res.metrics.size() == 1);
    CHECK(res.metrics[0].labeled_count == 6);
    std::filesystem::remove_all(dir);
}

TEST_CASE("run_experiment: infeasible budgets are config errors") {
    ExperimentConfig cfg = small_config();
    cfg.budget = 2.0;  // below the round count
    CHECK_THROWS_AS(run_experiment(cfg, tmp_dir("lftl_run_badbudget")), ConfigError);
    cfg.budget = 10000.0;  // exceeds the pool
    CHECK_THROWS_AS(run_experiment(cfg, tmp_dir("lftl_run_badbudget")), ConfigError);
}

TEST_CASE("parse_config: defaults, overrides, and strategy names") {
    nlohmann::json j = nlohmann::json::parse(R"({
        "dataset": {"kind": "two_moons", "classes": 2, "n_source": 50,
                    "n_target": 50, "rotation_deg": 30.0},
        "budget": 0.1,
        "rounds": 4,
        "cas": {"alpha": 0.05, "kappa": 250},
        "weights": {"beta1": 5.0},
        "adapt": {"epochs_per_round": 3, "vault_cadence": "step"},
        "strategy": "bvsb",
        "seed": 42
    })");
    ExperimentConfig cfg = parse_config(j);
    CHECK(cfg.dataset.kind == "two_moons");
    CHECK(cfg.dataset.spec.rotation ==
          doctest::Approx(std::numbers::pi / 6.0).epsilon(1e-12));
    CHECK(cfg.budget == 0.1);
    CHECK(cfg.rounds == 4);
    CHECK(cfg.cas.alpha == 0.05);
    CHECK(cfg.cas.lambda == 1.0);  // untouched default
    CHECK(cfg.cas.kappa == 250);
    CHECK(cfg.weights.beta1 == 5.0);
    CHECK(cfg.weights.beta2 == 0.9);
    CHECK(cfg.adapt.epochs_per_round == 3);
    CHECK(cfg.adapt.vault_cadence == VaultCadence::PerStep);
    CHECK(cfg.strategy == "bvsb");
    CHECK(cfg.seed == 42);
}

TEST_CASE("parse_config rejects unknown keys at root and nested levels") {
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"buget": 5})")), ConfigError);
    CHECK_THROWS_AS(
        parse_config(nlohmann::json::parse(R"({"cas": {"alpah": 0.1}})")), ConfigError);
    CHECK_THROWS_AS(
        parse_config(nlohmann::json::parse(R"({"dataset": {"clases": 2}})")),
        ConfigError);
    CHECK_THROWS_AS(
        parse_config(nlohmann::json::parse(R"({"adapt": {"vault_cadence": "never"}})")),
        ConfigError);
}

TEST_CASE("parse_config rejects bad values") {
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"rounds": 0})")), ConfigError);
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"budget": -1})")), ConfigError);
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"strategy": "magic"})")),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"test_fraction": 1.0})")),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"rounds": "three"})")),
                    ConfigError);
}

TEST_CASE("load_config reports missing files and parse failures as config errors") {
    CHECK_THROWS_AS(load_config("/nonexistent/lftl.json"), ConfigError);
    std::string path =
        (std::filesystem::temp_directory_path() / "lftl_bad_json.json").string();
    {
        std::ofstream os(path);
        os << "{ not json";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("make_domains: csv kind round-trips through files") {
    DomainSpec spec;
    spec.classes = 3;
    spec.n_source = 30;
    spec.n_target = 30;
    spec.seed = 5;
    auto [src, tgt] = gen_gaussian_ring(spec);
    auto dir = std::filesystem::temp_directory_path();
    std::string sp = (dir / "lftl_md_src.csv").string();
    std::string tp = (dir / "lftl_md_tgt.csv").string();
    save_csv(src, sp, false);
    save_csv(tgt, tp, false);
    DatasetConfig dc;
    dc.kind = "csv";
    dc.spec.classes = 3;
    dc.source_csv = sp;
    dc.target_csv = tp;
    auto [s2, t2] = make_domains(dc);
    CHECK(s2.size() == 30);
    CHECK(t2.labels == tgt.labels);
    std::filesystem::remove(sp);
    std::filesystem::remove(tp);

    dc.kind = "parquet";
    CHECK_THROWS_AS(make_domains(dc), ConfigError);
}
