#pragma once

// Stage 1: pre-train a diagnostic model over all source domains while
// splitting every student embedding u^k into a shared state f_sha(u^k) and a
// specific state f_spe(u^k).
//
// Both regularizers are written as weighted sums of squared residuals
// ("terms"). The same term enumeration backs the loss values and the
// gradients, so the two can never disagree.
//
//   L_sha = sum_k [ mean_{cross logs, student has state k} r(u_sha^k)^2
//                   - lambda * mean_{domain-k logs} r(u_sha^k)^2 ]
//   L_spe = sum_k mean_{domain-k logs} [ r(u_spe^k)^2
//                   - lambda * mean_{i != k, state exists} r(u_spe^i)^2 ]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "xcd/cdm.hpp"
#include "xcd/data_model.hpp"
#include "xcd/embed.hpp"
#include "xcd/errors.hpp"
#include "xcd/optim.hpp"
#include "xcd/rng.hpp"

namespace xcd {

enum class Head : std::uint8_t { shared, specific };

/// f_sha and f_spe: F -> F affine maps followed by tanh, shared across domains.
struct DecoupleHeads {
    Eigen::MatrixXd shared_w;   // F x F
    Eigen::MatrixXd shared_b;   // F x 1
    Eigen::MatrixXd specific_w; // F x F
    Eigen::MatrixXd specific_b; // F x 1

    template <class Fn>
    void for_each_param(Fn&& fn) { visit(*this, fn); }
    template <class Fn>
    void for_each_param(Fn&& fn) const { visit(*this, fn); }

    const Eigen::MatrixXd& weight(Head h) const { return h == Head::shared ? shared_w : specific_w; }
    const Eigen::MatrixXd& bias(Head h) const { return h == Head::shared ? shared_b : specific_b; }
    Eigen::MatrixXd& weight(Head h) { return h == Head::shared ? shared_w : specific_w; }
    Eigen::MatrixXd& bias(Head h) { return h == Head::shared ? shared_b : specific_b; }

    Eigen::VectorXd apply(Head h, const Eigen::VectorXd& u) const {
        if (u.size() != weight(h).cols()) throw UsageError("decouple: input dimension mismatch");
        return (weight(h) * u + bias(h).col(0)).array().tanh().matrix();
    }

private:
    template <class Self, class Fn>
    static void visit(Self& s, Fn& fn) {
        fn("shared_head.weight", s.shared_w);
        fn("shared_head.bias", s.shared_b);
        fn("specific_head.weight", s.specific_w);
        fn("specific_head.bias", s.specific_b);
    }
};

inline DecoupleHeads make_heads(int dim, std::uint64_t seed) {
    Rng rng(seed);
    const double a = std::sqrt(6.0 / (2.0 * dim));
    DecoupleHeads h;
    h.shared_w = detail::uniform_matrix(rng, dim, dim, a);
    h.shared_b = Eigen::MatrixXd::Zero(dim, 1);
    h.specific_w = detail::uniform_matrix(rng, dim, dim, a);
    h.specific_b = Eigen::MatrixXd::Zero(dim, 1);
    return h;
}

/// (u_sha, u_spe) for one student embedding.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> decouple(const DecoupleHeads& heads, const Eigen::VectorXd& u) {
    return {heads.apply(Head::shared, u), heads.apply(Head::specific, u)};
}

/// A log as seen by the trainer: indices into the source-domain tables.
struct DecoupleLog {
    std::uint32_t domain = 0;   // domain of the question
    std::uint32_t question = 0; // row in that domain's question table
    std::uint32_t student = 0;  // global student index
    int score = 0;
};

struct DecoupleBatch {
    std::vector<DecoupleLog> cross;                  // sampled across all source domains
    std::vector<std::vector<DecoupleLog>> in_domain; // one sample per source domain
};

/// Split a mixed sample into a batch whose in-domain samples are the
/// per-domain subsets of the cross sample.
inline DecoupleBatch make_batch(std::vector<DecoupleLog> logs, std::size_t domains) {
    DecoupleBatch b;
    b.in_domain.resize(domains);
    for (const auto& l : logs) b.in_domain.at(l.domain).push_back(l);
    b.cross = std::move(logs);
    return b;
}

namespace detail {

inline bool batch_empty(const DecoupleBatch& b) {
    if (!b.cross.empty()) return false;
    return std::all_of(b.in_domain.begin(), b.in_domain.end(), [](const auto& v) { return v.empty(); });
}

} // namespace detail

/// Emit (weight, student, state domain, head, log) for every L_sha term.
template <class HasState, class Emit>
void for_each_sha_term(const DecoupleBatch& batch, std::size_t domains, double lambda_adv, HasState&& has_state,
                       Emit&& emit) {
    std::vector<const DecoupleLog*> eligible;
    for (std::uint32_t k = 0; k < domains; ++k) {
        eligible.clear();
        for (const auto& l : batch.cross)
            if (has_state(l.student, k)) eligible.push_back(&l);
        for (const auto* l : eligible) emit(1.0 / static_cast<double>(eligible.size()), l->student, k, Head::shared, *l);

        if (k >= batch.in_domain.size() || lambda_adv == 0.0) continue;
        eligible.clear();
        for (const auto& l : batch.in_domain[k])
            if (has_state(l.student, k)) eligible.push_back(&l);
        for (const auto* l : eligible)
            emit(-lambda_adv / static_cast<double>(eligible.size()), l->student, k, Head::shared, *l);
    }
}

/// Emit every L_spe term. The adversarial part is skipped for students with
/// no specific state outside domain k (always the case when M = 1).
template <class HasState, class Emit>
void for_each_spe_term(const DecoupleBatch& batch, std::size_t domains, double lambda_adv, HasState&& has_state,
                       Emit&& emit) {
    std::vector<std::uint32_t> others;
    for (std::uint32_t k = 0; k < domains && k < batch.in_domain.size(); ++k) {
        const auto& logs = batch.in_domain[k];
        std::size_t n = 0;
        for (const auto& l : logs) n += has_state(l.student, k) ? 1 : 0;
        if (n == 0) continue;
        const double w = 1.0 / static_cast<double>(n);
        for (const auto& l : logs) {
            if (!has_state(l.student, k)) continue;
            emit(w, l.student, k, Head::specific, l);
            if (lambda_adv == 0.0) continue;
            others.clear();
            for (std::uint32_t i = 0; i < domains; ++i)
                if (i != k && has_state(l.student, i)) others.push_back(i);
            for (auto i : others)
                emit(-lambda_adv * w / static_cast<double>(others.size()), l.student, i, Head::specific, l);
        }
    }
}

/// L_sha given a residual oracle r(student, state_domain, head, log) = y - y_hat.
template <class HasState, class Residual>
double loss_sha(const DecoupleBatch& batch, std::size_t domains, double lambda_adv, HasState&& has_state,
                Residual&& residual) {
    if (detail::batch_empty(batch)) throw UsageError("loss_sha: empty batch");
    double total = 0.0;
    for_each_sha_term(batch, domains, lambda_adv, has_state,
                      [&](double w, std::uint32_t s, std::uint32_t k, Head h, const DecoupleLog& l) {
                          const double r = residual(s, k, h, l);
                          total += w * r * r;
                      });
    return total;
}

template <class HasState, class Residual>
double loss_spe(const DecoupleBatch& batch, std::size_t domains, double lambda_adv, HasState&& has_state,
                Residual&& residual) {
    if (detail::batch_empty(batch)) throw UsageError("loss_spe: empty batch");
    double total = 0.0;
    for_each_spe_term(batch, domains, lambda_adv, has_state,
                      [&](double w, std::uint32_t s, std::uint32_t k, Head h, const DecoupleLog& l) {
                          const double r = residual(s, k, h, l);
                          total += w * r * r;
                      });
    return total;
}

struct PretrainConfig {
    CdmKind kind = CdmKind::neuralcd;
    int dim = 64;
    int hidden1 = 512;
    int hidden2 = 256;
    int interaction_width = 0; // 0: max concept count over the source domains
    double lr = 0.002;
    int batch_size = 256;
    int epochs = 20;
    int patience = 3;
    double lambda_adv = 0.1;
    std::uint64_t seed = 0;
};

struct StudentStates {
    Eigen::VectorXd shared;
    Eigen::VectorXd specific;
};

struct PretrainStats {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_validation_loss = 0.0;
    std::vector<double> train_loss;      // mean batch loss per epoch
    std::vector<double> validation_loss; // per epoch
};

struct PretrainedBundle {
    PretrainConfig config;
    CdmModel model;
    DecoupleHeads heads;
    std::vector<DomainId> source_domains; // sorted
    /// Row order of each domain's embedding matrix (sorted student ids).
    std::map<DomainId, std::vector<StudentId>> domain_students;
    std::map<DomainId, Eigen::MatrixXd> student_embeddings;
    std::map<StudentId, std::map<DomainId, StudentStates>> states;
    std::string corpus_digest;
    PretrainStats stats;

    const StudentStates* find_state(const StudentId& s, const DomainId& d) const {
        auto it = states.find(s);
        if (it == states.end()) return nullptr;
        auto jt = it->second.find(d);
        return jt == it->second.end() ? nullptr : &jt->second;
    }

    /// Recompute shared/specific states from embeddings and heads.
    void refresh_states() {
        states.clear();
        for (const auto& [dom, students] : domain_students) {
            const auto& emb = student_embeddings.at(dom);
            for (std::size_t r = 0; r < students.size(); ++r) {
                const Eigen::VectorXd u = emb.row(static_cast<Eigen::Index>(r)).transpose();
                auto [sha, spe] = decouple(heads, u);
                states[students[r]][dom] = StudentStates{std::move(sha), std::move(spe)};
            }
        }
    }
};

/// Owns every trainable tensor of stage 1 and runs the optimization.
class DecoupleTrainer {
public:
    DecoupleTrainer(const std::vector<DomainDataset>& sources, const PretrainConfig& cfg)
        : cfg_(cfg), adam_(AdamConfig{cfg.lr}) {
        if (sources.empty()) throw UsageError("pretrain: at least one source domain required");
        if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.dim < 1) throw UsageError("pretrain: invalid configuration");
        if (!(cfg.lambda_adv >= 0.0)) throw UsageError("pretrain: lambda_adv must be nonnegative");

        std::vector<const DomainDataset*> doms;
        for (const auto& d : sources) doms.push_back(&d);
        std::sort(doms.begin(), doms.end(), [](auto* a, auto* b) { return a->domain_id < b->domain_id; });

        std::map<StudentId, std::uint32_t> global;
        int width = 0;
        for (const auto* d : doms) {
            if (d->logs.empty()) throw UsageError("pretrain: source domain " + d->domain_id + " has no logs");
            for (const auto& s : d->students) global.emplace(s, 0);
            width = std::max(width, static_cast<int>(d->concepts.size()));
        }
        std::uint32_t gi = 0;
        for (auto& [s, idx] : global) {
            idx = gi++;
            students_.push_back(s);
        }
        if (cfg_.interaction_width <= 0) cfg_.interaction_width = width;

        CdmShape shape{cfg_.kind, cfg_.dim, cfg_.interaction_width, cfg_.hidden1, cfg_.hidden2};
        model_ = make_cdm(shape, derive_seed(cfg_.seed, 11));
        heads_ = make_heads(cfg_.dim, derive_seed(cfg_.seed, 12));

        row_.assign(doms.size(), std::vector<std::int32_t>(students_.size(), -1));
        Rng split_rng(derive_seed(cfg_.seed, 13));
        for (std::uint32_t k = 0; k < doms.size(); ++k) {
            const auto& d = *doms[k];
            domain_ids_.push_back(d.domain_id);
            embeddings_.push_back(embed_domain(d, cfg_.dim));
            for (std::size_t r = 0; r < d.students.size(); ++r)
                row_[k][global.at(d.students[r])] = static_cast<std::int32_t>(r);
            domain_students_.push_back(d.students);
            student_vecs_.push_back(init_student_vecs(d.students.size(), cfg_.dim, derive_seed(cfg_.seed, 1000 + k)));

            // Leave two logs per student out for validation when at least one remains for training.
            std::map<std::uint32_t, std::vector<DecoupleLog>> by_student;
            const auto& qidx = embeddings_.back().question_index;
            for (const auto& l : d.logs)
                by_student[global.at(l.student_id)].push_back(
                    DecoupleLog{k, static_cast<std::uint32_t>(qidx.at(l.question_id)), global.at(l.student_id), l.score});
            for (auto& [s, logs] : by_student) {
                std::vector<char> held(logs.size(), 0);
                if (logs.size() >= 3)
                    for (auto i : split_rng.sample_indices(logs.size(), 2)) held[i] = 1;
                for (std::size_t i = 0; i < logs.size(); ++i) (held[i] ? validation_ : training_).push_back(logs[i]);
            }
        }
    }

    std::size_t domain_count() const { return domain_ids_.size(); }
    const std::vector<DecoupleLog>& training_logs() const { return training_; }
    const std::vector<DecoupleLog>& validation_logs() const { return validation_; }
    const CdmModel& model() const { return model_; }
    const DecoupleHeads& heads() const { return heads_; }
    const PretrainConfig& config() const { return cfg_; }

    bool has_state(std::uint32_t student, std::uint32_t k) const { return row_[k][student] >= 0; }

    Eigen::VectorXd state(std::uint32_t student, std::uint32_t k, Head h) const {
        return heads_.apply(h, student_vecs_[k].row(row_[k][student]).transpose());
    }

    /// y_hat for a log predicted from student's state in domain k.
    double predict_with_state(std::uint32_t student, std::uint32_t k, Head h, const DecoupleLog& l) const {
        const auto& e = embeddings_[l.domain];
        return predict(model_, state(student, k, h), e.question_vecs.row(l.question).transpose(), e.concept_vecs,
                       e.masks[l.question])
            .probability;
    }

    double batch_loss(const DecoupleBatch& b) const { return evaluate(b, nullptr); }

    /// Visit every trainable tensor: model, heads, then one embedding table per source domain.
    template <class Fn>
    void for_each_param(Fn&& fn) {
        model_.for_each_param([&](std::string_view n, Eigen::MatrixXd& m) { fn("cdm/" + std::string(n), m); });
        heads_.for_each_param([&](std::string_view n, Eigen::MatrixXd& m) { fn("heads/" + std::string(n), m); });
        for (std::size_t k = 0; k < student_vecs_.size(); ++k) fn("emb/" + domain_ids_[k], student_vecs_[k]);
    }

    /// Gradient of L_dec over the batch, one matrix per tensor in for_each_param order.
    std::vector<Eigen::MatrixXd> gradient(const DecoupleBatch& b) const {
        Grads g;
        evaluate(b, &g);
        return flatten(g);
    }

    /// One Adam step on L_dec over the batch; returns the loss before the step.
    double step(const DecoupleBatch& b) {
        const double l = evaluate(b, &grads_);
        if (!std::isfinite(l)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(adam_.steps()));
        const auto gs = flatten(grads_);
        adam_.begin_step();
        std::size_t i = 0;
        for_each_param([&](const std::string&, Eigen::MatrixXd& m) {
            adam_.update(i, m, gs[i]);
            ++i;
        });
        project_monotone(model_);
        return l;
    }

    double validation_loss() const {
        if (validation_.empty()) return std::numeric_limits<double>::quiet_NaN();
        return batch_loss(make_batch(validation_, domain_count()));
    }

    /// Full schedule: shuffled mini-batches per epoch, early stopping on
    /// validation L_dec with the best snapshot restored.
    PretrainStats train() {
        PretrainStats stats;
        Rng rng(derive_seed(cfg_.seed, 14));
        std::vector<DecoupleLog> order = training_;
        const std::size_t B = static_cast<std::size_t>(cfg_.batch_size);

        Snapshot best = snapshot();
        double best_val = validation_.empty() ? std::numeric_limits<double>::infinity() : validation_loss();
        stats.best_validation_loss = best_val;
        int since_best = 0;
        for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
            rng.shuffle(order);
            double sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += B) {
                const auto end = std::min(order.size(), start + B);
                sum += step(make_batch({order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end)},
                                       domain_count()));
                ++batches;
            }
            stats.train_loss.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
            stats.epochs_run = epoch;
            if (validation_.empty()) {
                best = snapshot();
                stats.best_epoch = epoch;
                continue;
            }
            const double val = validation_loss();
            if (!std::isfinite(val)) throw NumericError("pretrain: non-finite validation loss at epoch " + std::to_string(epoch));
            stats.validation_loss.push_back(val);
            if (val < best_val) {
                best_val = val;
                best = snapshot();
                stats.best_epoch = epoch;
                stats.best_validation_loss = val;
                since_best = 0;
            } else if (++since_best >= cfg_.patience) {
                break;
            }
        }
        restore(best);
        return stats;
    }

    PretrainedBundle bundle() const {
        PretrainedBundle b;
        b.config = cfg_;
        b.model = model_;
        b.heads = heads_;
        b.source_domains = domain_ids_;
        for (std::size_t k = 0; k < domain_ids_.size(); ++k) {
            b.domain_students[domain_ids_[k]] = domain_students_[k];
            b.student_embeddings[domain_ids_[k]] = student_vecs_[k];
        }
        b.refresh_states();
        return b;
    }

private:
    struct Snapshot {
        CdmModel model;
        DecoupleHeads heads;
        std::vector<Eigen::MatrixXd> student_vecs;
    };

    struct Grads {
        CdmModel model;
        DecoupleHeads heads;
        std::vector<Eigen::MatrixXd> embeddings;
    };

    static std::vector<Eigen::MatrixXd> flatten(Grads& g) {
        std::vector<Eigen::MatrixXd> out;
        g.model.for_each_param([&](std::string_view, Eigen::MatrixXd& m) { out.push_back(m); });
        g.heads.for_each_param([&](std::string_view, Eigen::MatrixXd& m) { out.push_back(m); });
        for (auto& m : g.embeddings) out.push_back(m);
        return out;
    }

    Snapshot snapshot() const { return {model_, heads_, student_vecs_}; }
    void restore(const Snapshot& s) {
        model_ = s.model;
        heads_ = s.heads;
        student_vecs_ = s.student_vecs;
    }

    struct Slot {
        std::uint32_t student, domain;
        Head head;
        Eigen::VectorXd out;
        Eigen::VectorXd grad;
    };

    // L_dec over the batch; when g is given it receives the full gradient.
    double evaluate(const DecoupleBatch& b, Grads* g) const {
        if (detail::batch_empty(b)) throw UsageError("pretrain: empty batch");
        if (g) {
            g->model = model_.zeros_like();
            g->heads = heads_;
            g->heads.for_each_param([](std::string_view, Eigen::MatrixXd& m) { m.setZero(); });
            g->embeddings.resize(student_vecs_.size());
            for (std::size_t k = 0; k < student_vecs_.size(); ++k)
                g->embeddings[k] = Eigen::MatrixXd::Zero(student_vecs_[k].rows(), student_vecs_[k].cols());
        }
        std::vector<Slot> slots;
        std::unordered_map<std::uint64_t, std::size_t> slot_of;
        auto slot_for = [&](std::uint32_t s, std::uint32_t k, Head h) -> Slot& {
            const std::uint64_t key = (static_cast<std::uint64_t>(s) << 20) | (static_cast<std::uint64_t>(k) << 1) |
                                      static_cast<std::uint64_t>(h == Head::specific);
            auto [it, fresh] = slot_of.emplace(key, slots.size());
            if (fresh) {
                slots.push_back(Slot{s, k, h, state(s, k, h), Eigen::VectorXd::Zero(cfg_.dim)});
            }
            return slots[it->second];
        };

        struct QuestionSlot {
            QuestionSide side;
            Eigen::VectorXd dhv;
        };
        std::vector<QuestionSlot> qslots;
        std::unordered_map<std::uint64_t, std::size_t> qslot_of;
        auto qslot_for = [&](const DecoupleLog& l) -> QuestionSlot& {
            const std::uint64_t key = (static_cast<std::uint64_t>(l.domain) << 32) | l.question;
            auto [it, fresh] = qslot_of.emplace(key, qslots.size());
            if (fresh) {
                const auto& e = embeddings_[l.domain];
                qslots.push_back(QuestionSlot{
                    question_side(model_, e.question_vecs.row(l.question).transpose(), e.concept_vecs, e.concept_mean),
                    Eigen::VectorXd::Zero(cfg_.dim)});
            }
            return qslots[it->second];
        };

        // Fused student side per (slot, question domain); dhu accumulates.
        struct StudentSlot {
            std::size_t slot;
            std::uint32_t domain;
            StudentSide side;
            Eigen::VectorXd dhu;
        };
        std::vector<StudentSlot> sslots;
        std::unordered_map<std::uint64_t, std::size_t> sslot_of;
        auto sslot_for = [&](std::uint32_t s, std::uint32_t k, Head h, std::uint32_t qdomain) -> StudentSlot& {
            Slot& slot = slot_for(s, k, h);
            const auto si = static_cast<std::size_t>(&slot - slots.data());
            const std::uint64_t key = (static_cast<std::uint64_t>(si) << 16) | qdomain;
            auto [it, fresh] = sslot_of.emplace(key, sslots.size());
            if (fresh) {
                const auto& e = embeddings_[qdomain];
                sslots.push_back(StudentSlot{si, qdomain, student_side(model_, slot.out, e.concept_vecs, e.concept_mean),
                                             Eigen::VectorXd::Zero(cfg_.dim)});
            }
            return sslots[it->second];
        };

        double total = 0.0;
        InteractionTrace net;
        auto term = [&](double w, std::uint32_t s, std::uint32_t k, Head h, const DecoupleLog& l) {
            StudentSlot& ss = sslot_for(s, k, h, l.domain);
            QuestionSlot& qs = qslot_for(l);
            const auto& e = embeddings_[l.domain];
            const auto& mask = e.masks[l.question];
            const double y_hat = interact(model_, ss.side, qs.side, mask, g ? &net : nullptr);
            const double r = static_cast<double>(l.score) - y_hat;
            total += w * r * r;
            if (g)
                interact_backward(model_, ss.side, qs.side, e.concept_vecs, mask, net, y_hat, -2.0 * w * r, g->model,
                                  ss.dhu, qs.dhv);
        };
        auto has = [&](std::uint32_t s, std::uint32_t k) { return has_state(s, k); };
        for_each_sha_term(b, domain_count(), cfg_.lambda_adv, has, term);
        for_each_spe_term(b, domain_count(), cfg_.lambda_adv, has, term);

        if (g) {
            // Fusion-layer gradients as one product per side instead of many rank-1 updates.
            const Eigen::Index F = cfg_.dim;
            const auto nq = static_cast<Eigen::Index>(qslots.size());
            Eigen::MatrixXd dh(F, nq), z(2 * F, nq);
            for (Eigen::Index i = 0; i < nq; ++i) {
                dh.col(i) = qslots[static_cast<std::size_t>(i)].dhv;
                z.col(i) = qslots[static_cast<std::size_t>(i)].side.zv;
            }
            g->model.question_fuse_w.noalias() += dh * z.transpose();
            g->model.question_fuse_b.col(0) += dh.rowwise().sum();

            const auto ns = static_cast<Eigen::Index>(sslots.size());
            dh.resize(F, ns);
            z.resize(2 * F, ns);
            for (Eigen::Index i = 0; i < ns; ++i) {
                dh.col(i) = sslots[static_cast<std::size_t>(i)].dhu;
                z.col(i) = sslots[static_cast<std::size_t>(i)].side.zu;
            }
            g->model.student_fuse_w.noalias() += dh * z.transpose();
            g->model.student_fuse_b.col(0) += dh.rowwise().sum();
            const Eigen::MatrixXd dz = model_.student_fuse_w.transpose() * dh;
            for (Eigen::Index i = 0; i < ns; ++i) {
                const auto& ss = sslots[static_cast<std::size_t>(i)];
                slots[ss.slot].grad += dz.col(i).head(F) + embeddings_[ss.domain].concept_mean.cwiseProduct(dz.col(i).tail(F));
            }
            for (const auto& slot : slots) {
                const Eigen::VectorXd pre_grad = slot.grad.cwiseProduct((1.0 - slot.out.array().square()).matrix());
                const auto row = row_[slot.domain][slot.student];
                const Eigen::VectorXd u = student_vecs_[slot.domain].row(row).transpose();
                g->heads.weight(slot.head) += pre_grad * u.transpose();
                g->heads.bias(slot.head).col(0) += pre_grad;
                g->embeddings[slot.domain].row(row) += (heads_.weight(slot.head).transpose() * pre_grad).transpose();
            }
        }
        return total;
    }

    PretrainConfig cfg_;
    Adam adam_;
    CdmModel model_;
    DecoupleHeads heads_;
    Grads grads_;
    std::vector<DomainId> domain_ids_;
    std::vector<StudentId> students_;
    std::vector<std::vector<StudentId>> domain_students_;
    std::vector<DomainEmbedding> embeddings_;
    std::vector<Eigen::MatrixXd> student_vecs_;
    std::vector<std::vector<std::int32_t>> row_; // [domain][global student] -> row or -1
    std::vector<DecoupleLog> training_, validation_;
};

/// Stage 1 end to end. Returns the frozen bundle with all decoupled states.
inline PretrainedBundle pretrain(const std::vector<DomainDataset>& sources, const PretrainConfig& cfg) {
    DecoupleTrainer trainer(sources, cfg);
    PretrainStats stats = trainer.train();
    PretrainedBundle b = trainer.bundle();
    b.stats = std::move(stats);
    return b;
}

} // namespace xcd
