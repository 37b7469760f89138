#pragma once

// Seeded multi-domain population generator with known ground truth.
//
// Every student has a shared ability vector (dim G) that drives responses in
// all domains and one specific ability vector per domain. A concept maps into
// ability space through a nonnegative weight vector summing to 1, so
// <ability, c> stays in [0,1]. Response model:
//
//   P(correct) = sigmoid(kappa * (mix * <shared, c> + (1 - mix) * <specific_k, c> - difficulty))
//
// Question texts carry the concept name and a coarse difficulty word drawn
// from a vocabulary common to all domains, which gives a text encoder
// something transferable to latch onto.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcd/data_model.hpp"
#include "xcd/errors.hpp"
#include "xcd/rng.hpp"

namespace xcd {

struct SynthConfig {
    int source_domains = 3;
    bool with_target = true;
    int students = 500;
    int questions_per_domain = 100;
    int concepts_per_domain = 10;
    int logs_per_student = 20;
    int ability_dim = 4;
    double mix_shared = 0.7;
    double kappa = 6.0;
    /// Spread of a student's ability components around their general level.
    double ability_spread = 0.25;
    double early_bird_fraction = 0.05;
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"source_domains", c.source_domains},
         {"with_target", c.with_target},
         {"students", c.students},
         {"questions_per_domain", c.questions_per_domain},
         {"concepts_per_domain", c.concepts_per_domain},
         {"logs_per_student", c.logs_per_student},
         {"ability_dim", c.ability_dim},
         {"mix_shared", c.mix_shared},
         {"kappa", c.kappa},
         {"ability_spread", c.ability_spread},
         {"early_bird_fraction", c.early_bird_fraction}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    c.source_domains = j.value("source_domains", c.source_domains);
    c.with_target = j.value("with_target", c.with_target);
    c.students = j.value("students", c.students);
    c.questions_per_domain = j.value("questions_per_domain", c.questions_per_domain);
    c.concepts_per_domain = j.value("concepts_per_domain", c.concepts_per_domain);
    c.logs_per_student = j.value("logs_per_student", c.logs_per_student);
    c.ability_dim = j.value("ability_dim", c.ability_dim);
    c.mix_shared = j.value("mix_shared", c.mix_shared);
    c.kappa = j.value("kappa", c.kappa);
    c.ability_spread = j.value("ability_spread", c.ability_spread);
    c.early_bird_fraction = j.value("early_bird_fraction", c.early_bird_fraction);
}

inline void validate(const SynthConfig& c) {
    if (c.students <= 0) throw UsageError("synth: students must be positive");
    if (c.questions_per_domain <= 0) throw UsageError("synth: questions_per_domain must be positive");
    if (c.logs_per_student <= 0) throw UsageError("synth: logs_per_student must be positive");
    if (c.source_domains <= 0) throw UsageError("synth: source_domains must be positive");
    if (c.concepts_per_domain <= 0 || c.concepts_per_domain > c.questions_per_domain)
        throw UsageError("synth: concepts_per_domain must be in [1, questions_per_domain]");
    if (c.ability_dim <= 0) throw UsageError("synth: ability_dim must be positive");
    if (!(c.mix_shared >= 0.0 && c.mix_shared <= 1.0)) throw UsageError("synth: mix_shared must be in [0,1]");
    if (!(c.kappa > 0.0)) throw UsageError("synth: kappa must be positive");
    if (!(c.early_bird_fraction > 0.0 && c.early_bird_fraction <= 1.0))
        throw UsageError("synth: early_bird_fraction must be in (0,1]");
    if (!(c.ability_spread >= 0.0)) throw UsageError("synth: ability_spread must be nonnegative");
}

struct GroundTruth {
    double mix_shared = 0.7;
    double kappa = 6.0;
    std::map<StudentId, std::vector<double>> shared_ability;
    std::map<StudentId, std::map<DomainId, std::vector<double>>> specific_ability;
    std::map<DomainId, std::map<QuestionId, double>> difficulty;
    /// Concept -> nonnegative ability-space weights summing to 1.
    std::map<DomainId, std::map<ConceptId, std::vector<double>>> concept_map;

    bool operator==(const GroundTruth&) const = default;

    /// Analytic P(correct) for a student on a question.
    double probability(const StudentId& s, const DomainId& d, const Question& q) const {
        const auto& sh = shared_ability.at(s);
        const auto& sp = specific_ability.at(s).at(d);
        double a_sh = 0.0, a_sp = 0.0;
        for (const auto& c : q.concept_ids) {
            const auto& w = concept_map.at(d).at(c);
            for (std::size_t g = 0; g < w.size(); ++g) {
                a_sh += w[g] * sh[g];
                a_sp += w[g] * sp[g];
            }
        }
        const double n = static_cast<double>(q.concept_ids.size());
        const double z = kappa * (mix_shared * a_sh / n + (1.0 - mix_shared) * a_sp / n - difficulty.at(d).at(q.question_id));
        return 1.0 / (1.0 + std::exp(-z));
    }
};

inline void to_json(nlohmann::json& j, const GroundTruth& t) {
    j = {{"mix_shared", t.mix_shared},
         {"kappa", t.kappa},
         {"shared_ability", t.shared_ability},
         {"specific_ability", t.specific_ability},
         {"difficulty", t.difficulty},
         {"concept_map", t.concept_map}};
}

inline void from_json(const nlohmann::json& j, GroundTruth& t) {
    j.at("mix_shared").get_to(t.mix_shared);
    j.at("kappa").get_to(t.kappa);
    j.at("shared_ability").get_to(t.shared_ability);
    j.at("specific_ability").get_to(t.specific_ability);
    j.at("difficulty").get_to(t.difficulty);
    j.at("concept_map").get_to(t.concept_map);
}

struct SynthResult {
    std::vector<DomainDataset> datasets;
    GroundTruth truth;
};

namespace detail {

inline std::string padded(int i, int width) {
    std::string s = std::to_string(i);
    if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    return s;
}

inline const char* difficulty_word(double d) {
    static constexpr std::array<const char*, 5> words = {"trivial", "easy", "medium", "hard", "expert"};
    auto b = static_cast<int>(d * 5.0);
    if (b < 0) b = 0;
    if (b > 4) b = 4;
    return words[static_cast<std::size_t>(b)];
}

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

} // namespace detail

/// Domain ids produced by generate(): "src1".."srcM" then "target".
inline std::vector<DomainId> synth_domain_ids(const SynthConfig& c) {
    std::vector<DomainId> ids;
    for (int k = 1; k <= c.source_domains; ++k) ids.push_back("src" + std::to_string(k));
    if (c.with_target) ids.push_back("target");
    return ids;
}

inline SynthResult generate(const SynthConfig& config, std::uint64_t seed) {
    validate(config);
    const auto G = static_cast<std::size_t>(config.ability_dim);
    const auto domains = synth_domain_ids(config);

    SynthResult out;
    GroundTruth& truth = out.truth;
    truth.mix_shared = config.mix_shared;
    truth.kappa = config.kappa;

    std::vector<StudentId> students;
    for (int s = 0; s < config.students; ++s) students.push_back("s" + detail::padded(s, 5));

    Rng ability_rng(derive_seed(seed, 1));
    for (const auto& s : students) {
        const double level = ability_rng.uniform();
        std::vector<double> shared(G);
        for (auto& a : shared) a = detail::clamp01(level + ability_rng.uniform(-config.ability_spread, config.ability_spread));
        truth.shared_ability[s] = shared;
        for (const auto& d : domains) {
            std::vector<double> spec(G);
            for (auto& a : spec) a = ability_rng.uniform();
            truth.specific_ability[s][d] = spec;
        }
    }

    for (std::size_t di = 0; di < domains.size(); ++di) {
        const auto& dom = domains[di];
        Rng rng(derive_seed(seed, 100 + di));
        DomainDataset ds;
        ds.domain_id = dom;
        ds.role = (config.with_target && di + 1 == domains.size()) ? DomainRole::target : DomainRole::source;

        std::vector<ConceptId> concepts;
        for (int c = 0; c < config.concepts_per_domain; ++c) {
            const ConceptId cid = dom + "-c" + detail::padded(c, 3);
            concepts.push_back(cid);
            std::vector<double> w(G);
            double sum = 0.0;
            for (auto& x : w) {
                x = rng.uniform(0.05, 1.0);
                sum += x;
            }
            for (auto& x : w) x /= sum;
            truth.concept_map[dom][cid] = w;
        }

        for (int q = 0; q < config.questions_per_domain; ++q) {
            Question qu;
            qu.question_id = dom + "-q" + detail::padded(q, 4);
            qu.domain_id = dom;
            // Every concept gets at least one question; the rest are random.
            const int c = q < config.concepts_per_domain
                              ? q
                              : static_cast<int>(rng.below(static_cast<std::uint64_t>(config.concepts_per_domain)));
            qu.concept_ids = {concepts[static_cast<std::size_t>(c)]};
            const double diff = rng.uniform();
            truth.difficulty[dom][qu.question_id] = diff;
            qu.text = "question on " + dom + "kc" + detail::padded(c, 3) + " level " + detail::difficulty_word(diff);
            ds.questions.push_back(std::move(qu));
        }

        const auto n_logs = static_cast<std::size_t>(std::min(config.logs_per_student, config.questions_per_domain));
        for (const auto& s : students) {
            const auto picks = rng.sample_indices(ds.questions.size(), n_logs);
            for (auto qi : picks) {
                const auto& qu = ds.questions[qi];
                const int y = rng.bernoulli(truth.probability(s, dom, qu)) ? 1 : 0;
                ds.logs.push_back(PracticeLog{s, qu.question_id, y, dom});
            }
        }
        finalize_dataset(ds);
        out.datasets.push_back(std::move(ds));
    }
    return out;
}

inline void export_truth(const GroundTruth& truth, const std::filesystem::path& path) {
    if (path.has_parent_path() && !std::filesystem::is_directory(path.parent_path()))
        throw DataError(path.string() + ": directory does not exist");
    detail::write_file(path, nlohmann::json(truth).dump(1) + "\n");
}

inline GroundTruth import_truth(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(detail::read_file(path)).get<GroundTruth>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": invalid ground truth: " + e.what());
    }
}

} // namespace xcd
