#pragma once

// Question recommendation for a diagnosed target student: half of the list
// from questions the model expects the student to answer correctly, half from
// the rest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcd/adapt.hpp"
#include "xcd/cdm.hpp"
#include "xcd/data_model.hpp"
#include "xcd/embed.hpp"
#include "xcd/errors.hpp"
#include "xcd/rng.hpp"

namespace xcd {

enum class Bucket { positive, negative };

inline std::string to_string(Bucket b) { return b == Bucket::positive ? "positive" : "negative"; }

enum class RecommendMode {
    uniform,  // x/2 drawn uniformly from each bucket
    frontier, // x/2 per bucket closest to 0.5
};

struct Recommendation {
    QuestionId question_id;
    double predicted_prob = 0.5;
    std::vector<std::pair<ConceptId, double>> mastery_pct; // associated concepts only
    double difficulty_pct = 50.0;
    Bucket bucket = Bucket::positive;
};

struct RecommendationList {
    StudentId student_id;
    std::vector<Recommendation> items;
    bool deficit_filled = false; // one bucket was short and the other made up the difference
};

inline RecommendationList recommend(const CdmModel& model, const TargetStates& states, const DomainDataset& target,
                                    const DomainEmbedding& emb, const StudentId& student, int x, std::uint64_t seed,
                                    RecommendMode mode = RecommendMode::uniform) {
    if (x < 2 || x % 2 != 0) throw UsageError("recommend: x must be an even number >= 2");
    if (target.questions.size() < static_cast<std::size_t>(x))
        throw UsageError("recommend: question bank has fewer than x questions");
    const Eigen::VectorXd u = states.state(student);

    const auto cidx = target.concept_index();
    const Eigen::VectorXd mastery = mastery_of(model, u, emb.concept_vecs);
    std::vector<double> prob(target.questions.size());
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < target.questions.size(); ++i) {
        const auto q = static_cast<Eigen::Index>(i);
        prob[i] = predict(model, u, emb.question_vecs.row(q).transpose(), emb.concept_vecs, emb.masks[i]).probability;
        (prob[i] >= 0.5 ? pos : neg).push_back(i);
    }

    const auto half = static_cast<std::size_t>(x / 2);
    std::size_t take_pos = std::min(half, pos.size());
    std::size_t take_neg = std::min(half, neg.size());
    RecommendationList out;
    out.student_id = student;
    if (take_pos < half) take_neg = std::min(neg.size(), static_cast<std::size_t>(x) - take_pos);
    if (take_neg < half) take_pos = std::min(pos.size(), static_cast<std::size_t>(x) - take_neg);
    out.deficit_filled = take_pos != half || take_neg != half;

    Rng rng(seed);
    auto draw = [&](std::vector<std::size_t>& bucket, std::size_t k) {
        std::vector<std::size_t> chosen;
        if (mode == RecommendMode::frontier) {
            std::stable_sort(bucket.begin(), bucket.end(),
                             [&](auto a, auto b) { return std::abs(prob[a] - 0.5) < std::abs(prob[b] - 0.5); });
            chosen.assign(bucket.begin(), bucket.begin() + static_cast<std::ptrdiff_t>(k));
        } else {
            for (auto i : rng.sample_indices(bucket.size(), k)) chosen.push_back(bucket[i]);
        }
        return chosen;
    };
    std::vector<std::size_t> picked = draw(pos, take_pos);
    for (auto i : draw(neg, take_neg)) picked.push_back(i);

    for (auto i : picked) {
        const auto& q = target.questions[i];
        Recommendation r;
        r.question_id = q.question_id;
        r.predicted_prob = prob[i];
        r.bucket = prob[i] >= 0.5 ? Bucket::positive : Bucket::negative;
        for (const auto& c : q.concept_ids) {
            const double m = model.shape.kind == CdmKind::irt ? mastery[0] : mastery[static_cast<Eigen::Index>(cidx.at(c))];
            r.mastery_pct.emplace_back(c, 100.0 * m);
        }
        r.difficulty_pct = 100.0 * difficulty_of(model, emb.question_vecs.row(static_cast<Eigen::Index>(i)).transpose(),
                                                 emb.concept_vecs, emb.masks[i]);
        out.items.push_back(std::move(r));
    }
    return out;
}

inline nlohmann::json to_json(const RecommendationList& list) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& r : list.items) {
        nlohmann::json mastery = nlohmann::json::object();
        for (const auto& [c, v] : r.mastery_pct) mastery[c] = v;
        items.push_back({{"question_id", r.question_id},
                         {"predicted_prob", r.predicted_prob},
                         {"bucket", to_string(r.bucket)},
                         {"mastery_pct", mastery},
                         {"difficulty_pct", r.difficulty_pct}});
    }
    return {{"student_id", list.student_id}, {"deficit_filled", list.deficit_filled}, {"items", items}};
}

inline std::string format_recommendations_text(const RecommendationList& list) {
    std::string out = "student " + list.student_id + (list.deficit_filled ? " (deficit filled)" : "") + "\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-20s %-9s %7s %-28s %12s\n", "question", "bucket", "prob", "mastery (%)",
                  "difficulty (%)");
    out += buf;
    for (const auto& r : list.items) {
        std::string m;
        for (const auto& [c, v] : r.mastery_pct) {
            char cell[96];
            std::snprintf(cell, sizeof cell, "%s%s %.2f", m.empty() ? "" : ", ", c.c_str(), v);
            m += cell;
        }
        std::snprintf(buf, sizeof buf, "%-20s %-9s %7.4f %-28s %12.2f\n", r.question_id.c_str(), to_string(r.bucket).c_str(),
                      r.predicted_prob, m.c_str(), r.difficulty_pct);
        out += buf;
    }
    return out;
}

} // namespace xcd
