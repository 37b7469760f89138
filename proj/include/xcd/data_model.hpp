#pragma once

// Core entities (logs, questions, domains), the corpus file formats, and
// the early-bird / unseen split of a target domain.
//
// On-disk corpus layout:
//   manifest.json        {"domains":[{"id":..,"role":"source"|"target","logs":path,"questions":path}]}
//   <domain>.logs.csv    header `student_id,question_id,score`, LF endings
//   <domain>.questions.json  JSON array of {"id","concepts","text"}, one record per line

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "xcd/errors.hpp"
#include "xcd/hash.hpp"
#include "xcd/rng.hpp"

namespace xcd {

using StudentId = std::string;
using QuestionId = std::string;
using ConceptId = std::string;
using DomainId = std::string;

enum class DomainRole { source, target };

inline std::string to_string(DomainRole r) { return r == DomainRole::source ? "source" : "target"; }

inline DomainRole parse_role(const std::string& s) {
    if (s == "source") return DomainRole::source;
    if (s == "target") return DomainRole::target;
    throw DataError("unknown domain role '" + s + "'");
}

struct PracticeLog {
    StudentId student_id;
    QuestionId question_id;
    int score = 0; // 1 = correct
    DomainId domain_id;

    bool operator==(const PracticeLog&) const = default;
};

struct Question {
    QuestionId question_id;
    DomainId domain_id;
    std::vector<ConceptId> concept_ids;
    std::string text;

    bool operator==(const Question&) const = default;
};

struct DomainDataset {
    DomainId domain_id;
    DomainRole role = DomainRole::source;
    std::vector<StudentId> students; // sorted, unique; every student with >= 1 log
    std::vector<Question> questions; // record order
    std::vector<ConceptId> concepts; // sorted, unique; union of question concepts
    std::vector<PracticeLog> logs;   // record order

    std::unordered_map<QuestionId, std::size_t> question_index() const {
        std::unordered_map<QuestionId, std::size_t> out;
        for (std::size_t i = 0; i < questions.size(); ++i) out.emplace(questions[i].question_id, i);
        return out;
    }

    std::map<ConceptId, std::size_t> concept_index() const {
        std::map<ConceptId, std::size_t> out;
        for (std::size_t i = 0; i < concepts.size(); ++i) out.emplace(concepts[i], i);
        return out;
    }

    bool has_student(const StudentId& s) const {
        return std::binary_search(students.begin(), students.end(), s);
    }
};

struct TargetSplit {
    std::vector<StudentId> early_bird_ids; // sorted
    std::vector<StudentId> unseen_ids;     // sorted
    std::vector<PracticeLog> early_bird_logs;
};

/// Recompute students and concepts from logs and questions, then check every
/// DomainDataset invariant. Throws DataError naming the offending record.
inline void finalize_dataset(DomainDataset& d) {
    std::set<ConceptId> concepts;
    std::unordered_set<QuestionId> qids;
    for (const auto& q : d.questions) {
        if (q.concept_ids.empty())
            throw DataError("domain " + d.domain_id + ": question " + q.question_id + " has no concepts");
        if (!qids.insert(q.question_id).second)
            throw DataError("domain " + d.domain_id + ": duplicate question id " + q.question_id);
        concepts.insert(q.concept_ids.begin(), q.concept_ids.end());
    }
    d.concepts.assign(concepts.begin(), concepts.end());

    std::set<StudentId> students;
    std::set<std::pair<StudentId, QuestionId>> seen;
    for (const auto& l : d.logs) {
        if (l.score != 0 && l.score != 1)
            throw DataError("domain " + d.domain_id + ": score must be 0 or 1");
        if (!qids.count(l.question_id))
            throw DataError("domain " + d.domain_id + ": log references unknown question " + l.question_id);
        if (!seen.emplace(l.student_id, l.question_id).second)
            throw DataError("domain " + d.domain_id + ": duplicate first-attempt log (" + l.student_id + ", " +
                            l.question_id + ")");
        students.insert(l.student_id);
    }
    d.students.assign(students.begin(), students.end());
}

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError(p.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(p.string() + ": cannot write file");
    out << content;
    if (!out) throw DataError(p.string() + ": write failed");
}

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Line numbers of the top-level array elements that are objects.
inline std::vector<std::size_t> record_lines(const std::string& text) {
    std::vector<std::size_t> lines;
    std::size_t line = 1;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (char c : text) {
        if (c == '\n') ++line;
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '[' || c == '{') {
            if (c == '{' && depth == 1) lines.push_back(line);
            ++depth;
        } else if (c == ']' || c == '}') --depth;
    }
    return lines;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<Question> parse_questions(const std::string& text, const std::string& file, const DomainId& domain) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(file + ":" + std::to_string(line_of_offset(text, e.byte)) + ": malformed JSON");
    }
    if (!doc.is_array()) throw DataError(file + ":1: expected a JSON array of question records");
    const auto lines = record_lines(text);
    std::vector<Question> out;
    out.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& r = doc[i];
        const std::string where = file + ":" + std::to_string(i < lines.size() ? lines[i] : 0) + ": ";
        if (!r.is_object() || !r.contains("id") || !r.contains("concepts") || !r.contains("text"))
            throw DataError(where + "question record needs id, concepts, text");
        if (!r["id"].is_string() || !r["text"].is_string() || !r["concepts"].is_array())
            throw DataError(where + "question record has wrongly typed fields");
        Question q;
        q.question_id = r["id"].get<std::string>();
        q.domain_id = domain;
        q.text = r["text"].get<std::string>();
        for (const auto& c : r["concepts"]) {
            if (!c.is_string()) throw DataError(where + "concept ids must be strings");
            q.concept_ids.push_back(c.get<std::string>());
        }
        if (q.concept_ids.empty()) throw DataError(where + "question " + q.question_id + " has no concepts");
        out.push_back(std::move(q));
    }
    return out;
}

inline std::vector<PracticeLog> parse_logs(const std::string& text, const std::string& file, const DomainId& domain,
                                           const std::unordered_set<QuestionId>& known_questions) {
    std::vector<PracticeLog> out;
    std::set<std::pair<StudentId, QuestionId>> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string where = file + ":" + std::to_string(lineno) + ": ";
        if (!header_seen) {
            if (line != "student_id,question_id,score")
                throw DataError(where + "expected header 'student_id,question_id,score'");
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3) throw DataError(where + "malformed row, expected 3 fields");
        if (f[0].empty() || f[1].empty()) throw DataError(where + "empty identifier");
        if (f[2] != "0" && f[2] != "1") throw DataError(where + "score must be 0 or 1, got '" + f[2] + "'");
        if (!known_questions.count(f[1])) throw DataError(where + "unknown question " + f[1]);
        if (!seen.emplace(f[0], f[1]).second)
            throw DataError(where + "duplicate first-attempt log (" + f[0] + ", " + f[1] + ")");
        out.push_back(PracticeLog{f[0], f[1], f[2] == "1" ? 1 : 0, domain});
    }
    if (!header_seen) throw DataError(file + ":1: empty log file");
    return out;
}

inline std::string logs_filename(const DomainId& d) { return d + ".logs.csv"; }
inline std::string questions_filename(const DomainId& d) { return d + ".questions.json"; }

} // namespace detail

/// Canonical CSV text for a log list.
inline std::string format_logs_csv(const std::vector<PracticeLog>& logs) {
    std::string out = "student_id,question_id,score\n";
    for (const auto& l : logs) {
        out += l.student_id;
        out += ',';
        out += l.question_id;
        out += ',';
        out += l.score ? '1' : '0';
        out += '\n';
    }
    return out;
}

/// Canonical JSON text for a question list: one record per line.
inline std::string format_questions_json(const std::vector<Question>& questions) {
    std::string out = "[\n";
    for (std::size_t i = 0; i < questions.size(); ++i) {
        nlohmann::json r;
        r["id"] = questions[i].question_id;
        r["concepts"] = questions[i].concept_ids;
        r["text"] = questions[i].text;
        out += r.dump();
        if (i + 1 < questions.size()) out += ',';
        out += '\n';
    }
    out += "]\n";
    return out;
}

inline std::string format_manifest(const std::vector<DomainDataset>& datasets) {
    nlohmann::json m;
    m["domains"] = nlohmann::json::array();
    for (const auto& d : datasets) {
        m["domains"].push_back({{"id", d.domain_id},
                                {"role", to_string(d.role)},
                                {"logs", detail::logs_filename(d.domain_id)},
                                {"questions", detail::questions_filename(d.domain_id)}});
    }
    return m.dump(2) + "\n";
}

/// Load and validate a corpus directory. Datasets come back ordered by domain id.
inline std::vector<DomainDataset> load_corpus(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const std::string manifest_text = detail::read_file(manifest_path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(manifest_path.string() + ":" + std::to_string(detail::line_of_offset(manifest_text, e.byte)) +
                        ": malformed JSON");
    }
    if (!manifest.is_object() || !manifest.contains("domains") || !manifest["domains"].is_array())
        throw DataError(manifest_path.string() + ":1: manifest needs a 'domains' array");

    std::vector<DomainDataset> out;
    std::set<DomainId> ids;
    for (const auto& entry : manifest["domains"]) {
        for (const char* key : {"id", "role", "logs", "questions"}) {
            if (!entry.contains(key) || !entry[key].is_string())
                throw DataError(manifest_path.string() + ": domain entry missing string field '" + key + "'");
        }
        DomainDataset d;
        d.domain_id = entry["id"].get<std::string>();
        if (!ids.insert(d.domain_id).second)
            throw DataError(manifest_path.string() + ": duplicate domain id " + d.domain_id);
        d.role = parse_role(entry["role"].get<std::string>());

        const auto qpath = dir / entry["questions"].get<std::string>();
        d.questions = detail::parse_questions(detail::read_file(qpath), qpath.string(), d.domain_id);
        std::unordered_set<QuestionId> qids;
        for (std::size_t i = 0; i < d.questions.size(); ++i) {
            if (!qids.insert(d.questions[i].question_id).second)
                throw DataError(qpath.string() + ": duplicate question id " + d.questions[i].question_id);
        }
        const auto lpath = dir / entry["logs"].get<std::string>();
        d.logs = detail::parse_logs(detail::read_file(lpath), lpath.string(), d.domain_id, qids);
        finalize_dataset(d);
        out.push_back(std::move(d));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.domain_id < b.domain_id; });
    return out;
}

/// Write canonical corpus files. The directory is created if needed.
inline void write_corpus(const std::vector<DomainDataset>& datasets, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "manifest.json", format_manifest(datasets));
    for (const auto& d : datasets) {
        detail::write_file(dir / detail::logs_filename(d.domain_id), format_logs_csv(d.logs));
        detail::write_file(dir / detail::questions_filename(d.domain_id), format_questions_json(d.questions));
    }
}

/// Digest of the canonical serialization; identifies a corpus in checkpoints.
inline std::string corpus_digest(const std::vector<DomainDataset>& datasets) {
    std::uint64_t h = fnv1a64(format_manifest(datasets));
    for (const auto& d : datasets) {
        h = fnv1a64(format_logs_csv(d.logs), h);
        h = fnv1a64(format_questions_json(d.questions), h);
    }
    return hex_digest(h);
}

/// Choose ceil(fraction * |students|) early birds uniformly without replacement.
inline TargetSplit make_target_split(const DomainDataset& dataset, double early_bird_fraction, std::uint64_t seed) {
    if (dataset.role != DomainRole::target)
        throw UsageError("make_target_split: domain " + dataset.domain_id + " is not a target domain");
    if (!(early_bird_fraction > 0.0 && early_bird_fraction <= 1.0))
        throw UsageError("make_target_split: early-bird fraction must lie in (0, 1]");
    if (dataset.students.empty() || dataset.logs.empty())
        throw UsageError("make_target_split: target domain has no students with logs");

    const std::size_t n = dataset.students.size();
    // The epsilon keeps products like 0.07 * 100 = 7.000000000000001 from rounding up.
    const auto want = static_cast<std::size_t>(std::ceil(early_bird_fraction * static_cast<double>(n) - 1e-9));
    if (want == 0) throw UsageError("make_target_split: fraction yields zero early-bird students");

    Rng rng(seed);
    const auto picked = rng.sample_indices(n, std::min(want, n));
    std::vector<char> is_eb(n, 0);
    for (auto i : picked) is_eb[i] = 1;

    TargetSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        (is_eb[i] ? split.early_bird_ids : split.unseen_ids).push_back(dataset.students[i]);
    }
    for (const auto& l : dataset.logs) {
        if (std::binary_search(split.early_bird_ids.begin(), split.early_bird_ids.end(), l.student_id))
            split.early_bird_logs.push_back(l);
    }
    return split;
}

/// Binary concept mask of a question against a domain's concept positions.
inline Eigen::VectorXd q_mask(const Question& question, const std::map<ConceptId, std::size_t>& concept_index) {
    if (question.concept_ids.empty())
        throw UsageError("q_mask: question " + question.question_id + " has no concepts");
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(concept_index.size()));
    for (const auto& c : question.concept_ids) {
        auto it = concept_index.find(c);
        if (it == concept_index.end())
            throw UsageError("q_mask: question " + question.question_id + " references unknown concept " + c);
        mask[static_cast<Eigen::Index>(it->second)] = 1.0;
    }
    return mask;
}

/// The single target domain of a corpus, optionally forced by id (all others become sources).
inline std::vector<DomainDataset> assign_target(std::vector<DomainDataset> datasets, const DomainId& target) {
    if (target.empty()) {
        const auto n = std::count_if(datasets.begin(), datasets.end(),
                                     [](const auto& d) { return d.role == DomainRole::target; });
        if (n != 1) throw DataError("corpus must declare exactly one target domain (found " + std::to_string(n) + ")");
        return datasets;
    }
    bool found = false;
    for (auto& d : datasets) {
        d.role = d.domain_id == target ? DomainRole::target : DomainRole::source;
        found = found || d.domain_id == target;
    }
    if (!found) throw DataError("target domain '" + target + "' not present in corpus");
    return datasets;
}

} // namespace xcd
