#pragma once

// Adaptation objective: supervised cross-entropy on actively labeled targets,
// the persistence-vault anchor-cluster loss, and entropy minimization on the
// unlabeled pool, combined as L = L_ce + beta1*L_vpa + beta2*L_ent.
// Vault entries are EMA features of the labeled anchors and act as constants
// in the loss: no gradient flows into them.

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "lftl/model.hpp"
#include "lftl/tensor.hpp"

namespace lftl {

class PersistenceVault {
public:
    explicit PersistenceVault(double gamma = 0.9) : gamma_(gamma) {
        if (gamma < 0.0 || gamma > 1.0)
            throw std::invalid_argument("PersistenceVault: gamma must lie in [0,1]");
    }

    double gamma() const { return gamma_; }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    bool contains(int id) const { return entries_.count(id) > 0; }
    const std::vector<double>& entry(int id) const { return entries_.at(id); }

    // each new anchor starts from its feature under the model that queried it
    void admit(const std::vector<int>& ids, const Tensor& features) {
        if (static_cast<int>(ids.size()) != features.rows())
            throw std::runtime_error("vault_admit: id/feature count mismatch");
        for (size_t i = 0; i < ids.size(); ++i) {
            if (entries_.count(ids[i]))
                throw std::runtime_error("vault_admit: id " + std::to_string(ids[i]) +
                                         " already present");
            entries_[ids[i]] = features.row(static_cast<int>(i));
        }
    }

    // f~ <- gamma*f + (1-gamma)*f~
    void update(const std::vector<int>& ids, const Tensor& features) {
        if (static_cast<int>(ids.size()) != features.rows())
            throw std::runtime_error("vault_update: id/feature count mismatch");
        for (size_t i = 0; i < ids.size(); ++i) {
            auto it = entries_.find(ids[i]);
            if (it == entries_.end())
                throw std::runtime_error("vault_update: unknown id " +
                                         std::to_string(ids[i]));
            auto& f = it->second;
            for (size_t k = 0; k < f.size(); ++k)
                f[k] = gamma_ * features.at(static_cast<int>(i), static_cast<int>(k)) +
                       (1.0 - gamma_) * f[k];
        }
    }

    std::vector<int> ids() const {  // ascending
        std::vector<int> out;
        for (const auto& [id, f] : entries_) out.push_back(id);
        return out;
    }

    Tensor anchor_matrix() const {  // rows ordered by ascending id
        if (entries_.empty()) return Tensor(0, 0);
        int d = static_cast<int>(entries_.begin()->second.size());
        Tensor m(static_cast<int>(entries_.size()), d);
        int r = 0;
        for (const auto& [id, f] : entries_) {
            for (int k = 0; k < d; ++k) m.at(r, k) = f[k];
            ++r;
        }
        return m;
    }

private:
    double gamma_;
    std::map<int, std::vector<double>> entries_;
};

struct LossWeights {
    double beta1 = 10.0;  // vault-cluster loss weight
    double beta2 = 0.9;   // entropy-minimization weight
};

enum class VaultCadence { PerEpoch, PerStep };

struct AdaptConfig {
    int epochs_per_round = 5;
    int batch_size = 64;
    bool mixup_enabled = false;
    double mixup_beta = 0.3;
    VaultCadence vault_cadence = VaultCadence::PerEpoch;
    double tau = 1.0;  // temperature of the anchor-assignment softmax

    void validate() const {
        if (epochs_per_round < 1)
            throw std::invalid_argument("AdaptConfig: epochs_per_round must be >= 1");
        if (batch_size < 1)
            throw std::invalid_argument("AdaptConfig: batch_size must be >= 1");
        if (tau <= 0.0) throw std::invalid_argument("AdaptConfig: tau must be > 0");
    }
};

inline Tensor one_hot(const std::vector<int>& labels, int classes) {
    Tensor q(static_cast<int>(labels.size()), classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw std::invalid_argument("one_hot: label out of range");
        q.at(static_cast<int>(i), labels[i]) = 1.0;
    }
    return q;
}

// ---- plain scalar losses (used for logging and as test oracles' subjects) ----

inline double ce_loss(const Tensor& probs, const Tensor& q) {
    if (probs.rows() != q.rows() || probs.cols() != q.cols())
        throw std::invalid_argument("ce_loss: shape mismatch");
    double s = 0.0;
    for (int i = 0; i < probs.rows(); ++i)
        for (int c = 0; c < probs.cols(); ++c)
            s += q.at(i, c) * std::log(std::max(probs.at(i, c), kLogEps));
    return -s / probs.rows();
}

inline double entropy_loss(const Tensor& probs) {
    double s = 0.0;
    for (int i = 0; i < probs.rows(); ++i)
        for (int c = 0; c < probs.cols(); ++c)
            s += probs.at(i, c) * std::log(std::max(probs.at(i, c), kLogEps));
    return -s / probs.rows();
}

// row i = softmax_j( cos(f_u(i), anchor(j)) / tau )
inline Tensor anchor_assignment(const Tensor& features_u, const Tensor& anchors,
                                double tau) {
    if (anchors.rows() == 0)
        throw std::runtime_error("anchor_assignment: no anchors before first query round");
    Tensor sims = cosine_sim_matrix(features_u, anchors);
    for (double& v : sims.data()) v /= tau;
    return softmax_rows(sims);
}

inline double vpa_loss(const Tensor& features_u, const PersistenceVault& vault,
                       double tau) {
    if (vault.empty())
        throw std::runtime_error("vpa_loss: empty vault");
    return entropy_loss(anchor_assignment(features_u, vault.anchor_matrix(), tau));
}

inline double total_loss(double ce, double vpa, double ent, const LossWeights& w) {
    return ce + w.beta1 * vpa + w.beta2 * ent;
}

// ---- tape versions (differentiable) ----

inline Tape::Var ce_loss_on(Tape& tape, Tape::Var probs, const Tensor& q) {
    if (q.rows() != probs.rows || q.cols() != probs.cols)
        throw std::invalid_argument("ce_loss: shape mismatch");
    Tape::Var m = tape.mul(tape.leaf(q), tape.log_clamped(probs));
    return tape.scale(tape.sum_all(m), -1.0 / probs.rows);
}

inline Tape::Var entropy_loss_on(Tape& tape, Tape::Var probs) {
    Tape::Var m = tape.mul(probs, tape.log_clamped(probs));
    return tape.scale(tape.sum_all(m), -1.0 / probs.rows);
}

inline Tape::Var vpa_loss_on(Tape& tape, Tape::Var features_u, const Tensor& anchors,
                             double tau) {
    if (anchors.rows() == 0)
        throw std::runtime_error("vpa_loss: empty vault");
    Tape::Var sims = tape.scale(tape.cosine_sim_const(features_u, anchors), 1.0 / tau);
    Tape::Var d = tape.softmax_rows(sims);
    Tape::Var m = tape.mul(d, tape.log_clamped(d));
    return tape.scale(tape.sum_all(m), -1.0 / features_u.rows);
}

// lambda_mix ~ Beta(beta, beta); convex blend of the batch with a shuffled
// copy of itself. Batches of one pass through unchanged.
inline std::pair<Tensor, Tensor> mixup_batch(const Tensor& x, const Tensor& q,
                                             double beta_param, std::mt19937_64& rng) {
    int n = x.rows();
    if (n < 2) return {x, q};
    std::gamma_distribution<double> g(beta_param, 1.0);
    double a = g(rng), b = g(rng);
    double lam = a / (a + b);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor xm(n, x.cols()), qm(n, q.cols());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < x.cols(); ++j)
            xm.at(i, j) = lam * x.at(i, j) + (1.0 - lam) * x.at(perm[i], j);
        for (int c = 0; c < q.cols(); ++c)
            qm.at(i, c) = lam * q.at(i, c) + (1.0 - lam) * q.at(perm[i], c);
    }
    return {xm, qm};
}

// global training progress across all rounds, driving the LR schedule
struct ProgressClock {
    long step = 0;
    long total_steps = 1;
    double p() const {
        if (total_steps <= 1) return step > 0 ? 1.0 : 0.0;
        return std::min(1.0, static_cast<double>(step) /
                                 static_cast<double>(total_steps - 1));
    }
};

struct StepTrace {
    long step = 0;
    double lr = 0.0;
    double ce = 0.0;
    double vpa = 0.0;
    double ent = 0.0;
    double total = 0.0;
};

struct RoundStats {
    std::vector<StepTrace> steps;
};

// One adaptation round. Labeled batches define the epoch; each is paired with
// an equally sized unlabeled batch drawn from a reshuffled cycle.
inline RoundStats adapt_round(MlpModel& model, SgdOptimizer& opt,
                              const Tensor& x_labeled, const std::vector<int>& y_labeled,
                              const std::vector<int>& labeled_ids,
                              const Tensor& x_unlabeled, PersistenceVault& vault,
                              const AdaptConfig& config, const LossWeights& weights,
                              double eta0, ProgressClock& clock, std::mt19937_64& rng,
                              bool freeze_classifier = false) {
    config.validate();
    int n_l = x_labeled.rows();
    if (n_l == 0) throw std::runtime_error("adapt_round: empty labeled set");
    if (static_cast<int>(y_labeled.size()) != n_l ||
        static_cast<int>(labeled_ids.size()) != n_l)
        throw std::invalid_argument("adapt_round: labeled arrays disagree in length");
    int classes = model.dims().classes;
    int n_u = x_unlabeled.rows();
    bool use_unlabeled = n_u > 0 && (weights.beta1 > 0.0 || weights.beta2 > 0.0);
    if (weights.beta1 > 0.0 && vault.empty())
        throw std::runtime_error("adapt_round: beta1 > 0 requires a non-empty vault");

    Tensor q_all = one_hot(y_labeled, classes);
    double log_c = std::log(static_cast<double>(classes));
    double log_nl = std::log(static_cast<double>(vault.empty() ? 1 : vault.size()));

    std::vector<int> l_order(n_l), u_order(n_u);
    for (int i = 0; i < n_l; ++i) l_order[i] = i;
    for (int i = 0; i < n_u; ++i) u_order[i] = i;
    size_t u_cursor = 0;

    auto gather = [](const Tensor& src, const std::vector<int>& rows) {
        Tensor out(static_cast<int>(rows.size()), src.cols());
        for (size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < src.cols(); ++j)
                out.at(static_cast<int>(i), j) = src.at(rows[i], j);
        return out;
    };

    auto refresh_vault = [&] {
        if (vault.empty()) return;
        // anchors live in the labeled set; map vault ids to labeled rows
        std::map<int, int> row_of;
        for (int i = 0; i < n_l; ++i) row_of[labeled_ids[i]] = i;
        std::vector<int> vids = vault.ids();
        std::vector<int> rows;
        rows.reserve(vids.size());
        for (int id : vids) rows.push_back(row_of.at(id));
        vault.update(vids, model.features(gather(x_labeled, rows)));
    };

    RoundStats stats;
    for (int epoch = 0; epoch < config.epochs_per_round; ++epoch) {
        std::shuffle(l_order.begin(), l_order.end(), rng);
        if (n_u > 0) std::shuffle(u_order.begin(), u_order.end(), rng);
        for (int start = 0; start < n_l; start += config.batch_size) {
            int bs = std::min(config.batch_size, n_l - start);
            std::vector<int> lb(l_order.begin() + start, l_order.begin() + start + bs);
            Tensor xb = gather(x_labeled, lb);
            Tensor qb = gather(q_all, lb);
            if (config.mixup_enabled)
                std::tie(xb, qb) = mixup_batch(xb, qb, config.mixup_beta, rng);

            Tape tape;
            auto vars = model.bind(tape);
            Tape::Var x_var = tape.leaf(xb);
            Tape::Var probs_l = tape.softmax_rows(model.logits_on(tape, vars, x_var));
            Tape::Var loss = ce_loss_on(tape, probs_l, qb);
            double ce_v = tape.value(loss)[0];
            double vpa_v = 0.0, ent_v = 0.0;

            if (use_unlabeled) {
                std::vector<int> ub(bs);
                for (int i = 0; i < bs; ++i) {
                    ub[i] = u_order[u_cursor++];
                    if (u_cursor == u_order.size()) {
                        std::shuffle(u_order.begin(), u_order.end(), rng);
                        u_cursor = 0;
                    }
                }
                Tape::Var xu_var = tape.leaf(gather(x_unlabeled, ub));
                Tape::Var feats_u = model.features_on(tape, vars, xu_var);
                if (weights.beta1 > 0.0) {
                    Tape::Var lv = vpa_loss_on(tape, feats_u, vault.anchor_matrix(),
                                               config.tau);
                    vpa_v = tape.value(lv)[0];
                    loss = tape.add(loss, tape.scale(lv, weights.beta1));
                }
                if (weights.beta2 > 0.0) {
                    Tape::Var probs_u = tape.softmax_rows(tape.add_rowvec(
                        tape.matmul(feats_u, vars.cls_weight), vars.cls_bias));
                    Tape::Var le = entropy_loss_on(tape, probs_u);
                    ent_v = tape.value(le)[0];
                    loss = tape.add(loss, tape.scale(le, weights.beta2));
                }
            }

            constexpr double tol = 1e-9;
            if (ce_v < -tol || ent_v < -tol || ent_v > log_c + tol || vpa_v < -tol ||
                vpa_v > log_nl + tol)
                throw std::runtime_error("adapt_round: loss bound violated");

            tape.backward(loss);
            std::vector<Tensor> grads;
            for (Tape::Var v : vars.all()) grads.push_back(tape.grad(v));
            double lr = lr_at(eta0, clock.p());
            opt.step(model, grads, lr, freeze_classifier);
            ++clock.step;
            if (config.vault_cadence == VaultCadence::PerStep) refresh_vault();

            stats.steps.push_back(StepTrace{clock.step, lr, ce_v, vpa_v, ent_v,
                                            tape.value(loss)[0]});
        }
        if (config.vault_cadence == VaultCadence::PerEpoch) refresh_vault();
    }
    return stats;
}

}  // namespace lftl
