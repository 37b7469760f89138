#include "catch_amalgamated.hpp"

#include <set>

#include "support.hpp"

using namespace xcd;

namespace {

struct Setup {
    DomainDataset target;
    DomainEmbedding emb;
    PretrainedBundle bundle;
    TargetStates states;
};

const Setup& setup(CdmKind kind) {
    static std::map<CdmKind, Setup> cache;
    auto it = cache.find(kind);
    if (it != cache.end()) return it->second;
    Setup s;
    const auto ds = generate(test::small_synth(50), 17).datasets;
    s.target = test::target_of(ds);
    auto cfg = test::small_pretrain(kind, 17);
    cfg.epochs = 2;
    s.bundle = pretrain(test::sources_of(ds), cfg);
    s.emb = embed_domain(s.target, cfg.dim);
    s.states = init_target_states(s.bundle, s.target.students);
    return cache.emplace(kind, std::move(s)).first->second;
}

void check_contract(const Setup& s, const RecommendationList& r, int x) {
    REQUIRE(r.items.size() == static_cast<std::size_t>(x));
    std::set<QuestionId> ids;
    std::size_t pos = 0;
    for (const auto& it : r.items) {
        ids.insert(it.question_id);
        const auto qi = s.emb.question(it.question_id);
        const auto& q = s.target.questions[qi];
        const double p = predict_target(s.bundle.model, s.states, s.emb, r.student_id, it.question_id);
        CHECK(it.predicted_prob == p);
        CHECK(it.bucket == (p >= 0.5 ? Bucket::positive : Bucket::negative));
        pos += it.bucket == Bucket::positive;
        REQUIRE(it.mastery_pct.size() == q.concept_ids.size());
        for (std::size_t c = 0; c < q.concept_ids.size(); ++c) {
            CHECK(it.mastery_pct[c].first == q.concept_ids[c]);
            CHECK((it.mastery_pct[c].second >= 0.0 && it.mastery_pct[c].second <= 100.0));
        }
        CHECK((it.difficulty_pct >= 0.0 && it.difficulty_pct <= 100.0));
    }
    CHECK(ids.size() == r.items.size());
    if (!r.deficit_filled) CHECK(pos == static_cast<std::size_t>(x / 2));
}

} // namespace

TEST_CASE("recommendation lists honour the bucket contract") {
    for (auto kind : {CdmKind::irt, CdmKind::mirt, CdmKind::neuralcd}) {
        const auto& s = setup(kind);
        for (std::size_t i = 0; i < 10; ++i) {
            const auto& student = s.target.students[i];
            for (auto mode : {RecommendMode::uniform, RecommendMode::frontier}) {
                const auto r = recommend(s.bundle.model, s.states, s.target, s.emb, student, 6, i, mode);
                INFO(to_string(kind) << " " << student);
                check_contract(s, r, 6);
            }
        }
    }
}

TEST_CASE("recommend is deterministic for a seed") {
    const auto& s = setup(CdmKind::neuralcd);
    const auto& st = s.target.students[0];
    const auto a = to_json(recommend(s.bundle.model, s.states, s.target, s.emb, st, 8, 3));
    CHECK(a == to_json(recommend(s.bundle.model, s.states, s.target, s.emb, st, 8, 3)));
}

TEST_CASE("frontier mode takes the items closest to one half") {
    const auto& s = setup(CdmKind::mirt);
    const auto& st = s.target.students[1];
    const auto r = recommend(s.bundle.model, s.states, s.target, s.emb, st, 4, 0, RecommendMode::frontier);
    for (auto b : {Bucket::positive, Bucket::negative}) {
        double worst_taken = 0.0;
        std::set<QuestionId> taken;
        for (const auto& it : r.items)
            if (it.bucket == b) {
                worst_taken = std::max(worst_taken, std::abs(it.predicted_prob - 0.5));
                taken.insert(it.question_id);
            }
        for (const auto& q : s.target.questions) {
            if (taken.count(q.question_id)) continue;
            const double p = predict_target(s.bundle.model, s.states, s.emb, st, q.question_id);
            if ((p >= 0.5) == (b == Bucket::positive) && !r.deficit_filled) CHECK(std::abs(p - 0.5) >= worst_taken);
        }
    }
}

TEST_CASE("an all-positive bank is filled from the other bucket") {
    auto s = setup(CdmKind::irt);
    s.bundle.model.difficulty_bias.setConstant(-50.0);
    const auto& st = s.target.students[2];
    const auto r = recommend(s.bundle.model, s.states, s.target, s.emb, st, 6, 1);
    CHECK(r.deficit_filled);
    REQUIRE(r.items.size() == 6);
    for (const auto& it : r.items) CHECK(it.bucket == Bucket::positive);
    check_contract(s, r, 6);
    CHECK(to_json(r)["deficit_filled"] == true);
}

TEST_CASE("recommend rejects bad x") {
    const auto& s = setup(CdmKind::neuralcd);
    const auto& st = s.target.students[0];
    CHECK_THROWS_AS(recommend(s.bundle.model, s.states, s.target, s.emb, st, 5, 0), UsageError);
    CHECK_THROWS_AS(recommend(s.bundle.model, s.states, s.target, s.emb, st, 0, 0), UsageError);
    const auto too_many = static_cast<int>(s.target.questions.size()) + 2;
    CHECK_THROWS_AS(recommend(s.bundle.model, s.states, s.target, s.emb, st, too_many, 0), UsageError);
    CHECK_THROWS_AS(recommend(s.bundle.model, s.states, s.target, s.emb, "ghost", 2, 0), UsageError);
}
