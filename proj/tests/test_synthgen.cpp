#include "catch_amalgamated.hpp"

#include "support.hpp"

using namespace xcd;

TEST_CASE("generate is a pure function of config and seed") {
    const auto cfg = test::small_synth();
    const auto a = generate(cfg, 7), b = generate(cfg, 7), c = generate(cfg, 8);
    CHECK(corpus_digest(a.datasets) == corpus_digest(b.datasets));
    CHECK(a.truth == b.truth);
    CHECK(corpus_digest(a.datasets) != corpus_digest(c.datasets));

    test::TempDir d1("syn1"), d2("syn2");
    export_truth(a.truth, d1 / "truth.json");
    export_truth(b.truth, d2 / "truth.json");
    CHECK(test::slurp(d1 / "truth.json") == test::slurp(d2 / "truth.json"));
    CHECK(import_truth(d1 / "truth.json") == a.truth);
    CHECK_THROWS_AS(export_truth(a.truth, d1 / "missing" / "truth.json"), DataError);
}

TEST_CASE("generated corpus has the requested shape and passes load_corpus") {
    auto cfg = test::small_synth(30);
    cfg.source_domains = 3;
    const auto res = generate(cfg, 1);
    REQUIRE(res.datasets.size() == 4);
    CHECK(test::sources_of(res.datasets).size() == 3);
    for (const auto& d : res.datasets) {
        CHECK(d.questions.size() == 24);
        CHECK(d.concepts.size() == 4);
        CHECK(d.logs.size() == 30u * 8u);
        CHECK(d.students.size() == 30);
    }
    test::TempDir dir("syn-load");
    write_corpus(res.datasets, dir.path());
    const auto loaded = load_corpus(dir.path());
    CHECK(corpus_digest(loaded) == corpus_digest(res.datasets));

    for (const auto& [s, a] : res.truth.shared_ability)
        for (double v : a) CHECK((v >= 0.0 && v <= 1.0));
    for (const auto& [d, qs] : res.truth.difficulty)
        for (const auto& [q, v] : qs) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("generate rejects empty populations") {
    auto cfg = test::small_synth();
    cfg.students = 0;
    CHECK_THROWS_AS(generate(cfg, 1), UsageError);
    cfg = test::small_synth();
    cfg.questions_per_domain = 0;
    CHECK_THROWS_AS(generate(cfg, 1), UsageError);
    cfg = test::small_synth();
    cfg.logs_per_student = 0;
    CHECK_THROWS_AS(generate(cfg, 1), UsageError);
    cfg = test::small_synth();
    cfg.mix_shared = 1.5;
    CHECK_THROWS_AS(generate(cfg, 1), UsageError);
}

TEST_CASE("ground-truth probability follows the response model") {
    GroundTruth t;
    t.mix_shared = 1.0;
    t.kappa = 6.0;
    t.shared_ability["s"] = {0.4, 0.8};
    t.specific_ability["s"]["a"] = {0.0, 0.0};
    t.specific_ability["s"]["b"] = {1.0, 1.0};
    t.concept_map["a"]["c"] = {0.5, 0.5};
    t.concept_map["b"]["c"] = {0.5, 0.5};
    t.difficulty["a"]["q"] = 0.6;
    t.difficulty["b"]["q"] = 0.6;

    // <shared, c> = 0.6 = difficulty -> sigmoid(0)
    CHECK(t.probability("s", "a", Question{"q", "a", {"c"}, ""}) == Catch::Approx(0.5).margin(1e-15));
    // mix 1: the specific term vanishes, so domains agree at equal difficulty
    CHECK(t.probability("s", "a", Question{"q", "a", {"c"}, ""}) == t.probability("s", "b", Question{"q", "b", {"c"}, ""}));

    t.mix_shared = 0.5;
    t.difficulty["a"]["q"] = 0.2;
    const double z = 6.0 * (0.5 * 0.6 + 0.5 * 0.0 - 0.2);
    CHECK(t.probability("s", "a", Question{"q", "a", {"c"}, ""}) == Catch::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-14));

    // raising an ability component never lowers P(correct)
    const double before = t.probability("s", "a", Question{"q", "a", {"c"}, ""});
    t.shared_ability["s"][0] += 0.1;
    CHECK(t.probability("s", "a", Question{"q", "a", {"c"}, ""}) >= before);
}

TEST_CASE("empirical accuracy matches the analytic mean") {
    auto cfg = test::small_synth(500);
    cfg.source_domains = 2;
    cfg.logs_per_student = 20;
    const auto res = generate(cfg, 42);
    for (const auto& d : res.datasets) {
        const auto qidx = d.question_index();
        double analytic = 0.0, observed = 0.0;
        for (const auto& l : d.logs) {
            analytic += res.truth.probability(l.student_id, d.domain_id, d.questions[qidx.at(l.question_id)]);
            observed += l.score;
        }
        const double n = static_cast<double>(d.logs.size());
        REQUIRE(n >= 10000);
        CHECK(std::abs(observed / n - analytic / n) <= 0.02);
    }
}
