// Command-line front end: pretrain / run / sample / eval.
// Exit codes: 0 success, 2 config error, 3 runtime error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lftl/harness.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string checkpoint;
    long long seed = -1;
    std::string strategy;
    bool eval_on_pool = false;
};

lftl::ExperimentConfig load_with_overrides(const CommonOpts& o) {
    lftl::ExperimentConfig cfg = lftl::load_config(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    if (!o.strategy.empty()) cfg.strategy = o.strategy;
    if (o.eval_on_pool) cfg.eval_on_pool = true;
    return cfg;
}

int cmd_pretrain(const CommonOpts& o) {
    lftl::ExperimentConfig cfg = load_with_overrides(o);
    auto [source, target] = lftl::make_domains(cfg.dataset);
    lftl::ModelDims dims = cfg.model;
    dims.input_dim = source.dim();
    dims.classes = cfg.dataset.spec.classes;
    lftl::MlpModel model =
        lftl::pretrain_source(source, dims, cfg.pretrain, cfg.seed);
    std::filesystem::create_directories(o.out_dir);
    std::string path = o.out_dir + "/model.ckpt";
    lftl::save_checkpoint(model, path);
    auto [acc, per_class] = lftl::evaluate(model, target);
    std::cout << "saved " << path << "\n";
    std::cout << "source-only target accuracy: " << acc << "\n";
    return 0;
}

int cmd_run(const CommonOpts& o) {
    lftl::ExperimentConfig cfg = load_with_overrides(o);
    std::optional<lftl::MlpModel> pre;
    if (!o.checkpoint.empty()) pre = lftl::load_checkpoint(o.checkpoint);
    lftl::ExperimentResult res =
        lftl::run_experiment(cfg, o.out_dir, pre ? &*pre : nullptr);
    for (const auto& m : res.metrics)
        std::cout << "round " << m.round << "  acc " << m.mean_acc
                  << "  labeled " << m.labeled_count << "\n";
    std::cout << "artifacts written to " << o.out_dir << "\n";
    return 0;
}

// score-only dry run of the first query round
int cmd_sample(const CommonOpts& o, bool round_probe) {
    (void)round_probe;
    lftl::ExperimentConfig cfg = load_with_overrides(o);
    auto [source, target] = lftl::make_domains(cfg.dataset);
    lftl::ModelDims dims = cfg.model;
    dims.input_dim = source.dim();
    dims.classes = cfg.dataset.spec.classes;
    lftl::MlpModel model =
        o.checkpoint.empty()
            ? lftl::pretrain_source(source, dims, cfg.pretrain, cfg.seed)
            : lftl::load_checkpoint(o.checkpoint, &dims);

    lftl::Tensor probs = model.probs(target.features);
    lftl::HypothesisLog hlog;
    hlog.round = 0;
    for (int i = 0; i < target.size(); ++i)
        hlog.probs_current[target.ids[i]] = probs.row(i);
    lftl::CasConfig cc = cfg.cas;
    int budget = cfg.budget < 1.0
                     ? static_cast<int>(std::floor(cfg.budget * target.size() + 0.5))
                     : static_cast<int>(std::lround(cfg.budget));
    cc.b = std::max(1, budget / cfg.rounds);
    auto scores = lftl::cas_scores(hlog, cc, dims.classes);
    auto picked = lftl::select_queries(scores, cc.b);
    std::set<int> picked_set(picked.begin(), picked.end());
    std::cout << "id,u_cm,u_ct,u,y_a,selected\n";
    std::cout.precision(12);
    for (const auto& s : scores)
        std::cout << s.id << "," << s.u_cm << "," << s.u_ct_of_ya << "," << s.u
                  << "," << s.y_a << "," << (picked_set.count(s.id) ? 1 : 0) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& csv_path, bool has_header) {
    lftl::MlpModel model = lftl::load_checkpoint(ckpt);
    lftl::CsvSchema schema{model.dims().classes, has_header};
    lftl::LabeledSet set = lftl::load_csv(csv_path, schema);
    auto [acc, per_class] = lftl::evaluate(model, set);
    std::cout << "mean_acc " << acc << "\n";
    for (size_t c = 0; c < per_class.size(); ++c)
        std::cout << "class_" << c << " " << per_class[c] << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LFTL: source-free active domain adaptation engine"};
    app.require_subcommand(1);

    CommonOpts o;
    bool round_probe = false;
    bool csv_header = false;
    std::string eval_ckpt, eval_csv;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("config", o.config_path, "JSON experiment config")
                ->required();
        sub->add_option("--seed", o.seed, "override the config seed");
        sub->add_option("--strategy", o.strategy, "override the query strategy");
        sub->add_option("--out-dir", o.out_dir, "artifact output directory");
        sub->add_option("--checkpoint", o.checkpoint, "start from this checkpoint");
        sub->add_flag("--eval-on-pool", o.eval_on_pool,
                      "evaluate on the full pool instead of a held-out split");
    };

    CLI::App* pre = app.add_subcommand("pretrain", "train the source model");
    add_common(pre, true);
    CLI::App* run = app.add_subcommand("run", "full query-and-adaptation experiment");
    add_common(run, true);
    CLI::App* sample = app.add_subcommand("sample", "score-only dry run");
    add_common(sample, true);
    sample->add_flag("--round-probe", round_probe, "score the round-0 pool only");
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a CSV dataset");
    ev->add_option("checkpoint", eval_ckpt, "model checkpoint")->required();
    ev->add_option("csv", eval_csv, "CSV dataset")->required();
    ev->add_flag("--header", csv_header, "CSV has a header line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (pre->parsed()) return cmd_pretrain(o);
        if (run->parsed()) return cmd_run(o);
        if (sample->parsed()) return cmd_sample(o, round_probe);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_csv, csv_header);
    } catch (const lftl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
