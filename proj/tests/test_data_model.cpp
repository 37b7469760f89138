#include "catch_amalgamated.hpp"

#include <string>

#include "support.hpp"

using namespace xcd;
using xcd::test::TempDir;

namespace {

void write_fixture(const TempDir& dir) {
    detail::write_file(dir / "manifest.json", R"({"domains": [
  {"id": "phys", "role": "source", "logs": "phys.csv", "questions": "phys.json"},
  {"id": "alg", "role": "target", "logs": "alg.csv", "questions": "alg.json"}
]})");
    detail::write_file(dir / "phys.json", R"([
{"id": "p1", "concepts": ["force"], "text": "push a cube"},
{"id": "p2", "concepts": ["force", "mass"], "text": "weigh the cube"}
])");
    detail::write_file(dir / "phys.csv", "student_id,question_id,score\na,p1,1\nb,p1,0\na,p2,0\n");
    detail::write_file(dir / "alg.json", R"([{"id": "q1", "concepts": ["lin"], "text": "solve x"}])");
    detail::write_file(dir / "alg.csv", "student_id,question_id,score\r\nc,q1,1\r\n");
}

std::string load_error(const TempDir& dir) {
    try {
        load_corpus(dir.path());
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("load_corpus reads a two-domain fixture") {
    TempDir dir("dm");
    write_fixture(dir);
    const auto ds = load_corpus(dir.path());
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].domain_id == "alg");
    CHECK(ds[0].role == DomainRole::target);
    CHECK(ds[0].logs.size() == 1);
    CHECK(ds[0].students == std::vector<StudentId>{"c"});

    const auto& phys = ds[1];
    CHECK(phys.questions.size() == 2);
    CHECK(phys.logs.size() == 3);
    CHECK(phys.students == std::vector<StudentId>{"a", "b"});
    CHECK(phys.concepts == std::vector<ConceptId>{"force", "mass"});
    CHECK(phys.logs[2].score == 0);
    CHECK(phys.logs[2].domain_id == "phys");
}

TEST_CASE("write_corpus then load_corpus round-trips") {
    TempDir a("dm-a"), b("dm-b");
    write_fixture(a);
    const auto ds = load_corpus(a.path());
    write_corpus(ds, b.path());
    const auto again = load_corpus(b.path());
    CHECK(corpus_digest(again) == corpus_digest(ds));
    write_corpus(again, a.path());
    CHECK(test::slurp(a / "manifest.json") == test::slurp(b / "manifest.json"));
    CHECK(test::slurp(a / "phys.logs.csv") == test::slurp(b / "phys.logs.csv"));
}

TEST_CASE("load_corpus rejects malformed input with file and line") {
    TempDir dir("dm-bad");
    write_fixture(dir);

    SECTION("score outside {0,1}") {
        detail::write_file(dir / "phys.csv", "student_id,question_id,score\na,p1,1\nb,p1,2\n");
        const auto msg = load_error(dir);
        CHECK(msg.find("phys.csv:3") != std::string::npos);
        CHECK(msg.find("score") != std::string::npos);
    }
    SECTION("unknown question") {
        detail::write_file(dir / "phys.csv", "student_id,question_id,score\na,zz,1\n");
        CHECK(load_error(dir).find("unknown question zz") != std::string::npos);
    }
    SECTION("duplicate first attempt") {
        detail::write_file(dir / "phys.csv", "student_id,question_id,score\na,p1,1\na,p1,0\n");
        CHECK(load_error(dir).find("duplicate") != std::string::npos);
    }
    SECTION("question without concepts") {
        detail::write_file(dir / "phys.json", "[\n{\"id\": \"p1\", \"concepts\": [\"f\"], \"text\": \"\"},\n"
                                              "{\"id\": \"p2\", \"concepts\": [], \"text\": \"t\"}\n]");
        const auto msg = load_error(dir);
        CHECK(msg.find("phys.json:3") != std::string::npos);
        CHECK(msg.find("no concepts") != std::string::npos);
    }
    SECTION("duplicate question id") {
        detail::write_file(dir / "phys.json", R"([{"id": "p1", "concepts": ["f"], "text": ""},
{"id": "p1", "concepts": ["f"], "text": ""}])");
        CHECK(load_error(dir).find("duplicate question id") != std::string::npos);
    }
    SECTION("bad header") {
        detail::write_file(dir / "phys.csv", "student,question,score\na,p1,1\n");
        CHECK(load_error(dir).find("header") != std::string::npos);
    }
    SECTION("missing file") {
        std::filesystem::remove(dir / "alg.json");
        CHECK(load_error(dir).find("cannot open") != std::string::npos);
    }
    SECTION("malformed manifest") {
        detail::write_file(dir / "manifest.json", "{\n\"domains\": [\n");
        CHECK(load_error(dir).find("malformed JSON") != std::string::npos);
    }
    SECTION("bad role") {
        detail::write_file(dir / "manifest.json",
                           R"({"domains": [{"id": "x", "role": "sink", "logs": "phys.csv", "questions": "phys.json"}]})");
        CHECK_THROWS_AS(load_corpus(dir.path()), DataError);
    }
}

TEST_CASE("assign_target requires exactly one target unless forced") {
    TempDir dir("dm-t");
    write_fixture(dir);
    auto ds = load_corpus(dir.path());
    CHECK(assign_target(ds, "").size() == 2);
    const auto forced = assign_target(ds, "phys");
    CHECK(forced[0].role == DomainRole::source);
    CHECK(forced[1].role == DomainRole::target);
    CHECK_THROWS_AS(assign_target(ds, "chem"), DataError);
    ds[1].role = DomainRole::target;
    CHECK_THROWS_AS(assign_target(ds, ""), DataError);
}

TEST_CASE("make_target_split partitions the target students") {
    const auto res = generate(test::small_synth(57), 3);
    const auto& target = test::target_of(res.datasets);
    for (double frac : {0.05, 0.07, 0.5, 1.0}) {
        const auto split = make_target_split(target, frac, 11);
        const auto n = target.students.size();
        CHECK(split.early_bird_ids.size() == static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9)));
        CHECK(split.early_bird_ids.size() + split.unseen_ids.size() == n);
        std::vector<StudentId> all = split.early_bird_ids;
        all.insert(all.end(), split.unseen_ids.begin(), split.unseen_ids.end());
        std::sort(all.begin(), all.end());
        CHECK(all == target.students);
        CHECK(std::is_sorted(split.early_bird_ids.begin(), split.early_bird_ids.end()));
        for (const auto& l : split.early_bird_logs)
            CHECK(std::binary_search(split.early_bird_ids.begin(), split.early_bird_ids.end(), l.student_id));
        std::size_t expected_logs = 0;
        for (const auto& l : target.logs)
            expected_logs += std::binary_search(split.early_bird_ids.begin(), split.early_bird_ids.end(), l.student_id);
        CHECK(split.early_bird_logs.size() == expected_logs);
    }
    CHECK(make_target_split(target, 0.2, 5).early_bird_ids == make_target_split(target, 0.2, 5).early_bird_ids);
    CHECK_THROWS_AS(make_target_split(target, 0.0, 1), UsageError);
    CHECK_THROWS_AS(make_target_split(target, 1.5, 1), UsageError);
    CHECK_THROWS_AS(make_target_split(test::sources_of(res.datasets)[0], 0.1, 1), UsageError);
}

TEST_CASE("q_mask marks exactly the question's concepts") {
    const std::map<ConceptId, std::size_t> idx{{"a", 0}, {"b", 1}, {"c", 2}};
    const auto m = q_mask(Question{"q", "d", {"c", "a"}, ""}, idx);
    CHECK(m.size() == 3);
    CHECK(m[0] == 1.0);
    CHECK(m[1] == 0.0);
    CHECK(m[2] == 1.0);
    CHECK_THROWS_AS(q_mask(Question{"q", "d", {}, ""}, idx), UsageError);
    CHECK_THROWS_AS(q_mask(Question{"q", "d", {"z"}, ""}, idx), UsageError);
}
