#pragma once

// Upper reference: a plain diagnostic model trained directly on target-domain
// logs (70/10/20 split over logs). Real cold-start diagnosis never has this
// data; the row only brackets the pipeline from above.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xcd/cdm.hpp"
#include "xcd/data_model.hpp"
#include "xcd/embed.hpp"
#include "xcd/errors.hpp"
#include "xcd/metrics.hpp"
#include "xcd/optim.hpp"
#include "xcd/rng.hpp"

namespace xcd {

struct SplitFractions {
    double train = 0.7;
    double validation = 0.1;
    double test = 0.2;
};

struct OracleConfig {
    CdmKind kind = CdmKind::neuralcd;
    int dim = 64;
    int hidden1 = 512;
    int hidden2 = 256;
    double lr = 0.002;
    int batch_size = 256;
    int epochs = 20;
    int patience = 3;
    SplitFractions fractions;
    std::uint64_t seed = 0;
};

inline EvalRow oracle_mode(const DomainDataset& target, const OracleConfig& cfg) {
    const auto& f = cfg.fractions;
    if (f.train <= 0.0 || f.validation < 0.0 || f.test <= 0.0 || std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
        throw UsageError("oracle: split fractions must be positive and sum to 1");
    const std::size_t n = target.logs.size();
    const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(f.validation * static_cast<double>(n)));
    if (n_train == 0 || n_train + n_val >= n) throw DataError("oracle: target domain has too few logs to split");

    const DomainEmbedding e = embed_domain(target, cfg.dim);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, 31));
    rng.shuffle(order);

    struct Log {
        Eigen::Index student;
        std::size_t question;
        int score;
    };
    auto to_log = [&](std::size_t i) {
        const auto& l = target.logs[i];
        const auto s = std::lower_bound(target.students.begin(), target.students.end(), l.student_id) -
                       target.students.begin();
        return Log{static_cast<Eigen::Index>(s), e.question(l.question_id), l.score};
    };
    std::vector<Log> train, val, test;
    for (std::size_t i = 0; i < n; ++i)
        (i < n_train ? train : (i < n_train + n_val ? val : test)).push_back(to_log(order[i]));

    CdmShape shape{cfg.kind, cfg.dim, std::max<int>(1, static_cast<int>(target.concepts.size())), cfg.hidden1, cfg.hidden2};
    CdmModel model = make_cdm(shape, derive_seed(cfg.seed, 32));
    Eigen::MatrixXd students = init_student_vecs(target.students.size(), cfg.dim, derive_seed(cfg.seed, 33));

    auto prob = [&](const CdmModel& m, const Eigen::MatrixXd& u, const Log& l) {
        return predict(m, u.row(l.student).transpose(), e.question_vecs.row(static_cast<Eigen::Index>(l.question)).transpose(),
                       e.concept_vecs, e.masks[l.question])
            .probability;
    };
    auto mse = [&](const std::vector<Log>& logs) {
        double s = 0.0;
        for (const auto& l : logs) {
            const double r = static_cast<double>(l.score) - prob(model, students, l);
            s += r * r;
        }
        return s / static_cast<double>(logs.size());
    };

    Adam adam(AdamConfig{cfg.lr});
    CdmModel best_model = model;
    Eigen::MatrixXd best_students = students;
    double best_val = val.empty() ? std::numeric_limits<double>::infinity() : mse(val);
    int since_best = 0;
    const auto B = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    CdmTrace trace;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(train);
        for (std::size_t start = 0; start < train.size(); start += B) {
            const auto end = std::min(train.size(), start + B);
            const double w = 1.0 / static_cast<double>(end - start);
            CdmModel g = model.zeros_like();
            Eigen::MatrixXd gu = Eigen::MatrixXd::Zero(students.rows(), students.cols());
            Eigen::VectorXd du(cfg.dim);
            for (std::size_t i = start; i < end; ++i) {
                const auto& l = train[i];
                const auto q = static_cast<Eigen::Index>(l.question);
                const double y_hat = forward(model, students.row(l.student).transpose(), e.question_vecs.row(q).transpose(),
                                             e.concept_vecs, e.masks[l.question], trace);
                const double r = static_cast<double>(l.score) - y_hat;
                du.setZero();
                backward(model, trace, e.concept_vecs, e.masks[l.question], -2.0 * w * r, g, &du);
                gu.row(l.student) += du.transpose();
            }
            adam.begin_step();
            std::size_t slot = 0;
            std::vector<Eigen::MatrixXd*> gs;
            g.for_each_param([&](std::string_view, Eigen::MatrixXd& m) { gs.push_back(&m); });
            model.for_each_param([&](std::string_view, Eigen::MatrixXd& m) {
                adam.update(slot, m, *gs[slot]);
                ++slot;
            });
            adam.update(slot, students, gu);
            project_monotone(model);
        }
        if (val.empty()) {
            best_model = model;
            best_students = students;
            continue;
        }
        const double v = mse(val);
        if (!std::isfinite(v)) throw NumericError("oracle: non-finite validation loss at epoch " + std::to_string(epoch));
        if (v < best_val) {
            best_val = v;
            best_model = model;
            best_students = students;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    std::vector<double> preds;
    std::vector<int> labels;
    for (const auto& l : test) {
        preds.push_back(prob(best_model, best_students, l));
        labels.push_back(l.score);
    }
    return score_predictions("oracle", Cohort::all, preds, labels);
}

} // namespace xcd
