#pragma once

// Stage 2: cold-start diagnosis in the target domain.
//
//   1. every target student starts from the mean of their shared states
//   2. early birds refine their own state on their real target logs
//   3. each early bird picks the source domain whose specific state is closest
//      to its refined target state, finds the top-p most similar unseen
//      students there, and lends them copies of its target logs
//   4. unseen students refine their state on the borrowed logs
//
// The diagnostic model, heads and question/concept embeddings stay frozen;
// only rows of the target state matrix move.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "xcd/cdm.hpp"
#include "xcd/data_model.hpp"
#include "xcd/decouple.hpp"
#include "xcd/embed.hpp"
#include "xcd/errors.hpp"
#include "xcd/optim.hpp"
#include "xcd/rng.hpp"

namespace xcd {

struct TargetStates {
    std::vector<StudentId> students; // sorted
    Eigen::MatrixXd vecs;            // one row per student
    std::vector<char> refined;

    std::size_t size() const { return students.size(); }

    std::size_t row(const StudentId& s) const {
        auto it = std::lower_bound(students.begin(), students.end(), s);
        if (it == students.end() || *it != s) throw UsageError("unknown target student " + s);
        return static_cast<std::size_t>(it - students.begin());
    }

    bool contains(const StudentId& s) const { return std::binary_search(students.begin(), students.end(), s); }

    Eigen::VectorXd state(const StudentId& s) const { return vecs.row(static_cast<Eigen::Index>(row(s))).transpose(); }

    bool operator==(const TargetStates& o) const {
        return students == o.students && refined == o.refined && vecs.rows() == o.vecs.rows() &&
               vecs.cols() == o.vecs.cols() && vecs == o.vecs;
    }
};

/// Cosine similarity, defined as 0 when either side is the zero vector.
inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw UsageError("cosine: dimension mismatch");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Step 1: u_T = mean of the student's shared states over the source domains
/// where the student has one.
inline TargetStates init_target_states(const PretrainedBundle& bundle, std::vector<StudentId> target_students) {
    std::sort(target_students.begin(), target_students.end());
    target_students.erase(std::unique(target_students.begin(), target_students.end()), target_students.end());
    TargetStates t;
    t.students = std::move(target_students);
    t.vecs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t.students.size()), bundle.config.dim);
    t.refined.assign(t.students.size(), 0);
    std::vector<StudentId> missing;
    for (std::size_t r = 0; r < t.students.size(); ++r) {
        int n = 0;
        for (const auto& k : bundle.source_domains) {
            if (const auto* st = bundle.find_state(t.students[r], k)) {
                t.vecs.row(static_cast<Eigen::Index>(r)) += st->shared.transpose();
                ++n;
            }
        }
        if (n == 0) {
            missing.push_back(t.students[r]);
            continue;
        }
        t.vecs.row(static_cast<Eigen::Index>(r)) /= n;
    }
    if (!missing.empty()) {
        std::string msg = "no source-domain state for target student(s):";
        for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
        if (missing.size() > 10) msg += " ... (" + std::to_string(missing.size()) + " total)";
        throw DataError(msg);
    }
    return t;
}

struct FinetuneConfig {
    double lr = 0.002;
    int batch_size = 256;
    int epochs = 20;
    int patience = 3;
    double holdout_fraction = 0.1; // early-stopping split of the fine-tuning logs
    std::uint64_t seed = 0;
};

struct FinetuneStats {
    int epochs_run = 0;
    int best_epoch = 0;
    std::size_t train_logs = 0;
    std::size_t holdout_logs = 0;
    double best_holdout_loss = std::numeric_limits<double>::quiet_NaN();
    std::string warning;
};

/// A target-domain response addressed by state row and question row.
struct TargetLog {
    std::size_t row = 0;
    std::size_t question = 0;
    int score = 0;
};

namespace detail {

inline std::vector<QuestionSide> question_sides(const CdmModel& m, const DomainEmbedding& e) {
    std::vector<QuestionSide> out;
    out.reserve(static_cast<std::size_t>(e.question_vecs.rows()));
    for (Eigen::Index q = 0; q < e.question_vecs.rows(); ++q)
        out.push_back(question_side(m, e.question_vecs.row(q).transpose(), e.concept_vecs, e.concept_mean));
    return out;
}

inline double mean_squared_residual(const CdmModel& m, const DomainEmbedding& e, const std::vector<QuestionSide>& qs,
                                    const Eigen::MatrixXd& vecs, const std::vector<TargetLog>& logs) {
    double sum = 0.0;
    for (const auto& l : logs) {
        const auto s = student_side(m, vecs.row(static_cast<Eigen::Index>(l.row)).transpose(), e.concept_vecs,
                                    e.concept_mean);
        const double r = static_cast<double>(l.score) - interact(m, s, qs[l.question], e.masks[l.question], nullptr);
        sum += r * r;
    }
    return logs.empty() ? 0.0 : sum / static_cast<double>(logs.size());
}

/// Minimize the mean squared residual over `logs` with respect to the rows of
/// `vecs` flagged in `trainable`. Other rows are never written.
inline FinetuneStats finetune_rows(const CdmModel& m, const DomainEmbedding& e, Eigen::MatrixXd& vecs,
                                   const std::vector<char>& trainable, std::vector<TargetLog> logs,
                                   const FinetuneConfig& cfg) {
    if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.patience < 1 || !(cfg.lr > 0.0) ||
        !(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0))
        throw UsageError("finetune: invalid configuration");
    for (const auto& l : logs)
        if (!trainable.at(l.row)) throw UsageError("finetune: log addresses a frozen row");

    FinetuneStats stats;
    Rng rng(cfg.seed);
    rng.shuffle(logs);
    std::size_t hold = 0;
    if (logs.size() >= 2 && cfg.holdout_fraction > 0.0)
        hold = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(logs.size())));
    std::vector<TargetLog> holdout(logs.begin(), logs.begin() + static_cast<std::ptrdiff_t>(hold));
    std::vector<TargetLog> train(logs.begin() + static_cast<std::ptrdiff_t>(hold), logs.end());
    stats.train_logs = train.size();
    stats.holdout_logs = holdout.size();
    if (cfg.epochs == 0 || train.empty()) return stats;

    // Trainable rows are copied into a compact block so frozen rows stay bit-identical.
    std::vector<std::size_t> rows;
    std::vector<std::int64_t> slot(trainable.size(), -1);
    for (const auto& l : train) {
        if (slot[l.row] < 0) {
            slot[l.row] = static_cast<std::int64_t>(rows.size());
            rows.push_back(l.row);
        }
    }
    std::sort(rows.begin(), rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) slot[rows[i]] = static_cast<std::int64_t>(i);
    const Eigen::Index F = vecs.cols();
    Eigen::MatrixXd block(static_cast<Eigen::Index>(rows.size()), F);
    for (std::size_t i = 0; i < rows.size(); ++i)
        block.row(static_cast<Eigen::Index>(i)) = vecs.row(static_cast<Eigen::Index>(rows[i]));
    auto write_back = [&](const Eigen::MatrixXd& b) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            vecs.row(static_cast<Eigen::Index>(rows[i])) = b.row(static_cast<Eigen::Index>(i));
    };

    const auto qs = question_sides(m, e);
    CdmModel scratch = m.zeros_like();
    Adam adam(AdamConfig{cfg.lr});
    Eigen::MatrixXd grad(block.rows(), F);
    Eigen::VectorXd dhu(F), dhv(F), du(F);
    InteractionTrace net;

    Eigen::MatrixXd best = block;
    double best_loss = std::numeric_limits<double>::infinity();
    if (!holdout.empty()) {
        best_loss = mean_squared_residual(m, e, qs, vecs, holdout);
        stats.best_holdout_loss = best_loss;
    }
    int since_best = 0;
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(train);
        for (std::size_t start = 0; start < train.size(); start += B) {
            const auto end = std::min(train.size(), start + B);
            const double w = 1.0 / static_cast<double>(end - start);
            grad.setZero();
            double loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& l = train[i];
                const auto r = static_cast<Eigen::Index>(slot[l.row]);
                const auto s = student_side(m, block.row(r).transpose(), e.concept_vecs, e.concept_mean);
                const double y_hat = interact(m, s, qs[l.question], e.masks[l.question], &net);
                const double res = static_cast<double>(l.score) - y_hat;
                loss += w * res * res;
                dhu.setZero();
                dhv.setZero();
                du.setZero();
                interact_backward(m, s, qs[l.question], e.concept_vecs, e.masks[l.question], net, y_hat, -2.0 * w * res,
                                  scratch, dhu, dhv);
                student_side_backward(m, s, e.concept_mean, dhu, scratch, &du);
                grad.row(r) += du.transpose();
            }
            if (!std::isfinite(loss) || !grad.allFinite())
                throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));
            adam.begin_step();
            adam.update(0, block, grad);
        }
        stats.epochs_run = epoch;
        if (holdout.empty()) {
            best = block;
            stats.best_epoch = epoch;
            continue;
        }
        write_back(block);
        const double val = mean_squared_residual(m, e, qs, vecs, holdout);
        if (!std::isfinite(val)) throw NumericError("finetune: non-finite holdout loss at epoch " + std::to_string(epoch));
        if (val < best_loss) {
            best_loss = val;
            best = block;
            stats.best_epoch = epoch;
            stats.best_holdout_loss = val;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    write_back(best);
    return stats;
}

inline std::vector<TargetLog> to_target_logs(const std::vector<PracticeLog>& logs, const TargetStates& states,
                                             const DomainEmbedding& e) {
    std::vector<TargetLog> out;
    out.reserve(logs.size());
    for (const auto& l : logs) out.push_back(TargetLog{states.row(l.student_id), e.question(l.question_id), l.score});
    return out;
}

} // namespace detail

/// Step 2: refine early-bird rows on their real target logs.
inline FinetuneStats finetune_early_birds(const PretrainedBundle& bundle, TargetStates& states, const TargetSplit& split,
                                          const DomainEmbedding& target, const FinetuneConfig& cfg) {
    if (split.early_bird_logs.empty()) throw UsageError("finetune_early_birds: no early-bird logs");
    std::vector<char> trainable(states.size(), 0);
    for (const auto& s : split.early_bird_ids) trainable[states.row(s)] = 1;
    auto stats = detail::finetune_rows(bundle.model, target, states.vecs, trainable,
                                       detail::to_target_logs(split.early_bird_logs, states, target), cfg);
    if (stats.epochs_run > 0)
        for (const auto& s : split.early_bird_ids) states.refined[states.row(s)] = 1;
    return stats;
}

/// Source domain whose specific state is most cosine-similar to u_T. Exact
/// ties go to the smallest domain id.
inline DomainId pick_reference_domain(const PretrainedBundle& bundle, const Eigen::VectorXd& u_t,
                                      const StudentId& early_bird) {
    std::vector<DomainId> candidates;
    for (const auto& k : bundle.source_domains)
        if (bundle.find_state(early_bird, k)) candidates.push_back(k);
    if (candidates.empty()) throw DataError("early bird " + early_bird + " has no source-domain state");
    std::sort(candidates.begin(), candidates.end());
    DomainId best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& k : candidates) {
        const double c = cosine(u_t, bundle.find_state(early_bird, k)->specific);
        if (c > best_score) {
            best_score = c;
            best = k;
        }
    }
    return best;
}

struct Peer {
    StudentId student_id;
    double similarity = 0.0;

    bool operator==(const Peer&) const = default;
};

/// Top-p unseen students by cosine of specific states in domain k; ties by id.
inline std::vector<Peer> peer_set(const PretrainedBundle& bundle, const StudentId& early_bird, const DomainId& k,
                                  const std::vector<StudentId>& unseen_ids, int p) {
    if (p < 1) throw UsageError("peer_set: p must be >= 1");
    const auto* anchor = bundle.find_state(early_bird, k);
    if (!anchor) throw DataError("early bird " + early_bird + " has no state in domain " + k);
    std::vector<Peer> all;
    for (const auto& s : unseen_ids) {
        if (const auto* st = bundle.find_state(s, k)) all.push_back(Peer{s, cosine(anchor->specific, st->specific)});
    }
    auto better = [](const Peer& a, const Peer& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.student_id < b.student_id;
    };
    const auto keep = std::min(all.size(), static_cast<std::size_t>(p));
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), better);
    all.resize(keep);
    return all;
}

struct SimulatedLog {
    StudentId student_id;
    QuestionId question_id;
    int score = 0;
    StudentId donor_id;
    double similarity = 0.0;

    bool operator==(const SimulatedLog&) const = default;
};

struct SimulatedLogSet {
    std::vector<SimulatedLog> logs;                 // sorted by (student, question)
    std::map<StudentId, DomainId> reference_domains; // early bird -> source domain

    std::vector<PracticeLog> as_practice_logs(const DomainId& domain) const {
        std::vector<PracticeLog> out;
        out.reserve(logs.size());
        for (const auto& l : logs) out.push_back(PracticeLog{l.student_id, l.question_id, l.score, domain});
        return out;
    }
};

/// Copy each early bird's target logs onto its peers. A (peer, question) pair
/// reached from several donors keeps the copy of the most similar donor, and
/// of the smaller donor id on exact ties.
inline SimulatedLogSet simulate_logs(const TargetSplit& split, const std::map<StudentId, std::vector<Peer>>& peers) {
    std::map<StudentId, std::vector<const PracticeLog*>> by_donor;
    for (const auto& l : split.early_bird_logs) by_donor[l.student_id].push_back(&l);

    std::map<std::pair<StudentId, QuestionId>, SimulatedLog> chosen;
    for (const auto& [donor, peer_list] : peers) {
        auto it = by_donor.find(donor);
        if (it == by_donor.end()) continue;
        for (const auto& peer : peer_list) {
            for (const auto* l : it->second) {
                SimulatedLog cand{peer.student_id, l->question_id, l->score, donor, peer.similarity};
                auto [slot, fresh] = chosen.try_emplace({peer.student_id, l->question_id}, cand);
                if (fresh) continue;
                auto& cur = slot->second;
                if (cand.similarity > cur.similarity || (cand.similarity == cur.similarity && cand.donor_id < cur.donor_id))
                    cur = cand;
            }
        }
    }
    SimulatedLogSet out;
    out.logs.reserve(chosen.size());
    for (auto& [key, l] : chosen) out.logs.push_back(std::move(l));
    return out;
}

inline std::string format_simulated_csv(const SimulatedLogSet& set) {
    std::string out = "student_id,question_id,score,donor_id,similarity\n";
    char buf[64];
    for (const auto& l : set.logs) {
        std::snprintf(buf, sizeof buf, "%.17g", l.similarity);
        out += l.student_id + "," + l.question_id + "," + std::to_string(l.score) + "," + l.donor_id + "," + buf + "\n";
    }
    return out;
}

/// Step 4: refine unseen-student rows on the simulated logs. An empty set is a
/// no-op reported through FinetuneStats::warning.
inline FinetuneStats finetune_cold_start(const PretrainedBundle& bundle, TargetStates& states,
                                         const SimulatedLogSet& simulated, const TargetSplit& split,
                                         const DomainEmbedding& target, const FinetuneConfig& cfg) {
    if (simulated.logs.empty()) {
        FinetuneStats stats;
        stats.warning = "no simulated logs; cold-start states keep their averaged initialization";
        return stats;
    }
    std::vector<char> trainable(states.size(), 0);
    for (const auto& s : split.unseen_ids) trainable[states.row(s)] = 1;
    std::vector<TargetLog> logs;
    logs.reserve(simulated.logs.size());
    for (const auto& l : simulated.logs)
        logs.push_back(TargetLog{states.row(l.student_id), target.question(l.question_id), l.score});
    auto stats = detail::finetune_rows(bundle.model, target, states.vecs, trainable, std::move(logs), cfg);
    if (stats.epochs_run > 0)
        for (const auto& l : simulated.logs) states.refined[states.row(l.student_id)] = 1;
    return stats;
}

/// Per-concept mastery of a target student (one value for IRT).
inline Eigen::VectorXd diagnose(const PretrainedBundle& bundle, const TargetStates& states, const StudentId& student,
                                const DomainEmbedding& target) {
    return mastery_of(bundle.model, states.state(student), target.concept_vecs);
}

inline double predict_target(const CdmModel& m, const TargetStates& states, const DomainEmbedding& target,
                             const StudentId& student, const QuestionId& question) {
    const auto q = target.question(question);
    return predict(m, states.state(student), target.question_vecs.row(static_cast<Eigen::Index>(q)).transpose(),
                   target.concept_vecs, target.masks[q])
        .probability;
}

struct AdaptConfig {
    double early_bird_fraction = 0.05;
    int peer_count = 50;
    FinetuneConfig finetune;
    std::uint64_t seed = 0;
};

struct AdaptResult {
    TargetSplit split;
    TargetStates initial; // after step 1
    TargetStates states;  // after step 4
    SimulatedLogSet simulated;
    FinetuneStats early_bird_stats;
    FinetuneStats cold_start_stats;
};

/// Steps 1-4 in order.
inline AdaptResult run_adaptation(const PretrainedBundle& bundle, const DomainDataset& target, const AdaptConfig& cfg) {
    if (target.role != DomainRole::target) throw UsageError("adapt: domain " + target.domain_id + " is not the target");
    if (cfg.peer_count < 1) throw UsageError("adapt: peer count must be >= 1");
    AdaptResult r;
    r.split = make_target_split(target, cfg.early_bird_fraction, derive_seed(cfg.seed, 21));
    const DomainEmbedding emb = embed_domain(target, bundle.config.dim);

    r.initial = init_target_states(bundle, target.students);
    r.states = r.initial;

    FinetuneConfig eb_cfg = cfg.finetune;
    eb_cfg.seed = derive_seed(cfg.seed, 22);
    r.early_bird_stats = finetune_early_birds(bundle, r.states, r.split, emb, eb_cfg);

    std::map<StudentId, std::vector<Peer>> peers;
    for (const auto& eb : r.split.early_bird_ids) {
        const DomainId k = pick_reference_domain(bundle, r.states.state(eb), eb);
        r.simulated.reference_domains[eb] = k;
        peers[eb] = peer_set(bundle, eb, k, r.split.unseen_ids, cfg.peer_count);
    }
    auto refs = std::move(r.simulated.reference_domains);
    r.simulated = simulate_logs(r.split, peers);
    r.simulated.reference_domains = std::move(refs);

    FinetuneConfig cold_cfg = cfg.finetune;
    cold_cfg.seed = derive_seed(cfg.seed, 23);
    r.cold_start_stats = finetune_cold_start(bundle, r.states, r.simulated, r.split, emb, cold_cfg);
    return r;
}

} // namespace xcd
