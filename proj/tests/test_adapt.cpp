#include "catch_amalgamated.hpp"

#include <set>

#include "support.hpp"

using namespace xcd;

namespace {

struct World {
    std::vector<DomainDataset> datasets;
    PretrainedBundle bundle;
    DomainEmbedding target_emb;

    const DomainDataset& target() const { return test::target_of(datasets); }
};

const World& world() {
    static const World w = [] {
        World x;
        x.datasets = generate(test::small_synth(60), 13).datasets;
        auto cfg = test::small_pretrain(CdmKind::neuralcd, 13);
        cfg.epochs = 2;
        x.bundle = pretrain(test::sources_of(x.datasets), cfg);
        x.target_emb = embed_domain(test::target_of(x.datasets), cfg.dim);
        return x;
    }();
    return w;
}

PretrainedBundle state_bundle(int dim) {
    PretrainedBundle b;
    b.config.dim = dim;
    b.source_domains = {"a", "b", "c"};
    return b;
}

Eigen::VectorXd v2(double x, double y) {
    Eigen::VectorXd v(2);
    v << x, y;
    return v;
}

FinetuneConfig quick(int epochs = 5) {
    FinetuneConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.lr = 0.02;
    c.seed = 3;
    return c;
}

} // namespace

TEST_CASE("cosine handles zero vectors and scale") {
    CHECK(cosine(v2(1, 0), v2(0, 0)) == 0.0);
    CHECK(cosine(v2(0, 0), v2(0, 0)) == 0.0);
    CHECK(cosine(v2(1, 1), v2(3, 3)) == Catch::Approx(1.0));
    CHECK(cosine(v2(1, 0), v2(-2, 0)) == -1.0);
    CHECK_THROWS_AS(cosine(v2(1, 0), Eigen::VectorXd::Ones(3)), UsageError);
}

TEST_CASE("init_target_states averages shared states over present domains") {
    auto b = state_bundle(2);
    b.states["s1"]["a"] = StudentStates{v2(1, 2), v2(9, 9)};
    b.states["s1"]["c"] = StudentStates{v2(3, -2), v2(9, 9)};
    b.states["s2"]["b"] = StudentStates{v2(0.5, 0.25), v2(9, 9)};
    const auto t = init_target_states(b, {"s2", "s1", "s2"});
    CHECK(t.students == std::vector<StudentId>{"s1", "s2"});
    CHECK(t.state("s1") == v2(2, 0));
    CHECK(t.state("s2") == v2(0.5, 0.25));
    CHECK(t.refined == std::vector<char>{0, 0});
    CHECK_THROWS_AS(t.row("s3"), UsageError);

    try {
        init_target_states(b, {"s1", "ghost"});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("ghost") != std::string::npos);
    }
}

TEST_CASE("early-bird fine-tuning touches only early-bird rows") {
    const auto& w = world();
    const auto split = make_target_split(w.target(), 0.2, 4);
    auto states = init_target_states(w.bundle, w.target().students);
    const auto before = states;
    const auto stats = finetune_early_birds(w.bundle, states, split, w.target_emb, quick());
    CHECK(stats.epochs_run >= 1);
    CHECK(stats.holdout_logs == static_cast<std::size_t>(0.1 * static_cast<double>(split.early_bird_logs.size())));
    for (const auto& s : split.unseen_ids) CHECK(states.state(s) == before.state(s));

    // without a holdout the best block is the last one, so something must move
    states = before;
    auto cfg = quick();
    cfg.holdout_fraction = 0.0;
    finetune_early_birds(w.bundle, states, split, w.target_emb, cfg);
    bool any_changed = false;
    for (const auto& s : split.unseen_ids) CHECK(states.state(s) == before.state(s));
    for (const auto& s : split.early_bird_ids) any_changed = any_changed || states.state(s) != before.state(s);
    CHECK(any_changed);
    for (const auto& s : split.early_bird_ids) CHECK(states.refined[states.row(s)] == 1);
    for (const auto& s : split.unseen_ids) CHECK(states.refined[states.row(s)] == 0);
}

TEST_CASE("zero epochs leave the states unchanged") {
    const auto& w = world();
    const auto split = make_target_split(w.target(), 0.2, 4);
    auto states = init_target_states(w.bundle, w.target().students);
    const auto before = states;
    const auto stats = finetune_early_birds(w.bundle, states, split, w.target_emb, quick(0));
    CHECK(stats.epochs_run == 0);
    CHECK(states == before);
}

TEST_CASE("fitting a single correct log raises its prediction") {
    const auto& w = world();
    const auto& target = w.target();
    auto states = init_target_states(w.bundle, target.students);
    const StudentId s = target.students[3];
    const QuestionId q = target.questions[5].question_id;
    TargetSplit split;
    split.early_bird_ids = {s};
    split.early_bird_logs = {PracticeLog{s, q, 1, target.domain_id}};
    for (const auto& o : target.students)
        if (o != s) split.unseen_ids.push_back(o);

    const double before = predict_target(w.bundle.model, states, w.target_emb, s, q);
    REQUIRE(before < 1.0);
    auto cfg = quick(3);
    const auto stats = finetune_early_birds(w.bundle, states, split, w.target_emb, cfg);
    CHECK(stats.holdout_logs == 0);
    CHECK(predict_target(w.bundle.model, states, w.target_emb, s, q) > before);
}

TEST_CASE("fine-tuning rejects empty or misdirected input") {
    const auto& w = world();
    auto states = init_target_states(w.bundle, w.target().students);
    TargetSplit empty;
    CHECK_THROWS_AS(finetune_early_birds(w.bundle, states, empty, w.target_emb, quick()), UsageError);
    auto bad = quick();
    bad.holdout_fraction = 1.0;
    const auto split = make_target_split(w.target(), 0.2, 4);
    CHECK_THROWS_AS(finetune_early_birds(w.bundle, states, split, w.target_emb, bad), UsageError);
}

TEST_CASE("pick_reference_domain follows cosine with ties to the smaller id") {
    auto b = state_bundle(2);
    b.states["e"]["a"] = StudentStates{v2(0, 0), v2(1, 0)};
    b.states["e"]["b"] = StudentStates{v2(0, 0), v2(1, 1)};
    CHECK(pick_reference_domain(b, v2(1, 0), "e") == "a");
    CHECK(pick_reference_domain(b, v2(0.1, 0.1), "e") == "b");
    // invariant under positive rescaling
    CHECK(pick_reference_domain(b, v2(250, 0), "e") == "a");

    b.states["e"]["c"] = StudentStates{v2(0, 0), v2(1, 0)};
    b.states["e"].erase("a");
    b.states["e"]["b"] = StudentStates{v2(0, 0), v2(2, 0)};
    CHECK(pick_reference_domain(b, v2(1, 0), "e") == "b"); // tie between b and c

    // zero u_T scores 0 everywhere: smallest id wins
    CHECK(pick_reference_domain(b, v2(0, 0), "e") == "b");
    CHECK_THROWS_AS(pick_reference_domain(b, v2(1, 0), "nobody"), DataError);
}

TEST_CASE("peer_set ranks by similarity then id") {
    auto b = state_bundle(2);
    b.states["eb"]["a"] = StudentStates{v2(0, 0), v2(1, 0)};
    // scores 0.9, 0.5, 0.5 built from angles
    const double a9 = std::acos(0.9), a5 = std::acos(0.5);
    b.states["u3"]["a"] = StudentStates{v2(0, 0), v2(std::cos(a9), std::sin(a9))};
    b.states["u2"]["a"] = StudentStates{v2(0, 0), v2(std::cos(a5), -std::sin(a5))};
    b.states["u1"]["a"] = StudentStates{v2(0, 0), v2(2 * std::cos(a5), 2 * std::sin(a5))};
    b.states["u0"]["b"] = StudentStates{v2(0, 0), v2(1, 0)}; // no state in a: skipped

    const std::vector<StudentId> unseen{"u0", "u1", "u2", "u3"};
    const auto p2 = peer_set(b, "eb", "a", unseen, 2);
    REQUIRE(p2.size() == 2);
    CHECK(p2[0].student_id == "u3");
    CHECK(p2[0].similarity == Catch::Approx(0.9));
    CHECK(p2[1].student_id == "u1");
    const auto all = peer_set(b, "eb", "a", unseen, 50);
    REQUIRE(all.size() == 3);
    CHECK(all[2].student_id == "u2");

    b.states["u4"]["a"] = StudentStates{v2(0, 0), v2(3, 0)};
    const auto top = peer_set(b, "eb", "a", {"u4", "u3"}, 1);
    CHECK(top[0].student_id == "u4");
    CHECK(top[0].similarity == 1.0);

    CHECK(peer_set(b, "eb", "a", {"u0"}, 5).empty());
    CHECK_THROWS_AS(peer_set(b, "eb", "a", unseen, 0), UsageError);
}

TEST_CASE("peer_set equals a brute-force sort on grid states") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto b = test::grid_bundle(seed, 20, 3, 2);
        std::vector<StudentId> students;
        for (const auto& [s, _] : b.states) students.push_back(s);
        const std::vector<StudentId> eb(students.begin(), students.begin() + 4);
        const std::vector<StudentId> unseen(students.begin() + 4, students.end());
        for (const auto& e : eb) {
            for (const auto& k : b.source_domains) {
                const auto* anchor = b.find_state(e, k);
                if (!anchor) continue;
                std::vector<std::pair<double, StudentId>> brute;
                for (const auto& s : unseen)
                    if (const auto* st = b.find_state(s, k))
                        brute.emplace_back(-test::brute_cosine(anchor->specific, st->specific), s);
                std::sort(brute.begin(), brute.end());
                for (int p : {1, 3, 50}) {
                    const auto got = peer_set(b, e, k, unseen, p);
                    REQUIRE(got.size() == std::min<std::size_t>(brute.size(), static_cast<std::size_t>(p)));
                    for (std::size_t i = 0; i < got.size(); ++i) {
                        CHECK(got[i].student_id == brute[i].second);
                        CHECK(got[i].similarity == -brute[i].first);
                    }
                }
            }
        }
    }
}

TEST_CASE("simulate_logs copies donor logs onto peers") {
    TargetSplit split;
    split.early_bird_ids = {"e1", "e2"};
    split.early_bird_logs = {{"e1", "q1", 1, "t"}, {"e1", "q2", 0, "t"}, {"e1", "q3", 1, "t"}, {"e2", "q1", 0, "t"}};

    SECTION("cardinality is the product without collisions") {
        const auto sim = simulate_logs(split, {{"e1", {{"p1", 0.8}, {"p2", 0.7}}}});
        CHECK(sim.logs.size() == 6);
        for (const auto& l : sim.logs) CHECK(l.donor_id == "e1");
        CHECK(std::is_sorted(sim.logs.begin(), sim.logs.end(), [](const auto& a, const auto& b) {
            return std::tie(a.student_id, a.question_id) < std::tie(b.student_id, b.question_id);
        }));
    }
    SECTION("conflicting duplicates keep the most similar donor") {
        const auto sim = simulate_logs(split, {{"e1", {{"p", 0.9}}}, {"e2", {{"p", 0.4}}}});
        REQUIRE(sim.logs.size() == 3);
        CHECK(sim.logs[0].question_id == "q1");
        CHECK(sim.logs[0].score == 1);
        CHECK(sim.logs[0].donor_id == "e1");
    }
    SECTION("exact ties keep the smaller donor id") {
        const auto sim = simulate_logs(split, {{"e2", {{"p", 0.5}}}, {"e1", {{"p", 0.5}}}});
        CHECK(sim.logs[0].donor_id == "e1");
    }
    SECTION("empty peer sets give an empty set") {
        CHECK(simulate_logs(split, {{"e1", {}}, {"e2", {}}}).logs.empty());
        CHECK(simulate_logs(split, {}).logs.empty());
    }
    SECTION("csv keeps provenance") {
        const auto csv = format_simulated_csv(simulate_logs(split, {{"e2", {{"p", 0.25}}}}));
        CHECK(csv == "student_id,question_id,score,donor_id,similarity\np,q1,0,e2,0.25\n");
    }
}

TEST_CASE("cold-start fine-tuning touches only unseen rows") {
    const auto& w = world();
    const auto split = make_target_split(w.target(), 0.2, 4);
    auto states = init_target_states(w.bundle, w.target().students);

    SimulatedLogSet empty;
    const auto before = states;
    const auto noop = finetune_cold_start(w.bundle, states, empty, split, w.target_emb, quick());
    CHECK_FALSE(noop.warning.empty());
    CHECK(states == before);

    std::map<StudentId, std::vector<Peer>> peers;
    for (const auto& e : split.early_bird_ids) {
        const auto k = pick_reference_domain(w.bundle, states.state(e), e);
        peers[e] = peer_set(w.bundle, e, k, split.unseen_ids, 5);
    }
    const auto sim = simulate_logs(split, peers);
    REQUIRE_FALSE(sim.logs.empty());
    finetune_cold_start(w.bundle, states, sim, split, w.target_emb, quick());
    for (const auto& s : split.early_bird_ids) CHECK(states.state(s) == before.state(s));
    std::set<StudentId> touched;
    for (const auto& l : sim.logs) touched.insert(l.student_id);
    for (const auto& s : split.unseen_ids)
        if (!touched.count(s)) CHECK(states.state(s) == before.state(s));
}

TEST_CASE("run_adaptation is deterministic and complete") {
    const auto& w = world();
    AdaptConfig cfg;
    cfg.early_bird_fraction = 0.1;
    cfg.peer_count = 10;
    cfg.finetune = quick();
    cfg.seed = 9;
    const auto a = run_adaptation(w.bundle, w.target(), cfg);
    const auto b = run_adaptation(w.bundle, w.target(), cfg);
    CHECK(a.states == b.states);
    CHECK(format_simulated_csv(a.simulated) == format_simulated_csv(b.simulated));
    CHECK(a.states.size() == w.target().students.size());
    CHECK(a.simulated.reference_domains.size() == a.split.early_bird_ids.size());
    std::size_t bound = 0;
    for (const auto& e : a.split.early_bird_ids) {
        std::size_t n = 0;
        for (const auto& l : a.split.early_bird_logs) n += l.student_id == e;
        bound += n * 10;
    }
    CHECK(a.simulated.logs.size() <= bound);
    for (const auto& l : a.simulated.logs) {
        const bool real = std::any_of(a.split.early_bird_logs.begin(), a.split.early_bird_logs.end(), [&](const auto& r) {
            return r.student_id == l.donor_id && r.question_id == l.question_id && r.score == l.score;
        });
        CHECK(real);
    }
    CHECK_THROWS_AS(run_adaptation(w.bundle, w.datasets[0], cfg), UsageError);
}

TEST_CASE("diagnose reports mastery in (0,1)") {
    const auto& w = world();
    const auto states = init_target_states(w.bundle, w.target().students);
    for (const auto& s : w.target().students) {
        const auto m = diagnose(w.bundle, states, s, w.target_emb);
        CHECK(m.size() == static_cast<Eigen::Index>(w.target().concepts.size()));
        CHECK(((m.array() > 0.0) && (m.array() < 1.0)).all());
    }
    CHECK_THROWS_AS(diagnose(w.bundle, states, "ghost", w.target_emb), UsageError);
}
