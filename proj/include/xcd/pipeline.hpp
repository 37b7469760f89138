#pragma once

// Run configuration and the five pipeline commands. Each command reads its
// inputs from disk, writes its artifacts under RunConfig::out, and returns
// what it wrote so callers (CLI, tests) can inspect it.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcd/adapt.hpp"
#include "xcd/checkpoint.hpp"
#include "xcd/data_model.hpp"
#include "xcd/decouple.hpp"
#include "xcd/embed.hpp"
#include "xcd/errors.hpp"
#include "xcd/hash.hpp"
#include "xcd/metrics.hpp"
#include "xcd/oracle.hpp"
#include "xcd/recommend.hpp"
#include "xcd/synthgen.hpp"

namespace xcd {

inline constexpr std::array<double, 4> kLearningRates = {0.001, 0.002, 0.02, 0.05};

struct RunConfig {
    std::string corpus = "corpus";
    std::string out = "xcd-out";
    std::string checkpoint; // empty: the command's default under `out`
    DomainId target_domain; // empty: the corpus manifest decides
    CdmKind cdm = CdmKind::neuralcd;
    int dim = 64;
    int hidden1 = 512;
    int hidden2 = 256;
    double lr = 0.002;
    double adapt_lr = 0.002;
    bool allow_any_lr = false;
    int batch_size = 256;
    int pretrain_epochs = 20;
    int adapt_epochs = 20;
    int oracle_epochs = 20;
    int patience = 3;
    double lambda_adv = 0.1;
    double early_bird_fraction = 0.05;
    int peer_count = 50;
    int x = 6;
    RecommendMode recommend_mode = RecommendMode::uniform;
    bool oracle = true;
    std::uint64_t seed = 0;
    bool deterministic = false;
    SynthConfig synth;
};

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"corpus", c.corpus},
            {"out", c.out},
            {"checkpoint", c.checkpoint},
            {"target_domain", c.target_domain},
            {"cdm", to_string(c.cdm)},
            {"dim", c.dim},
            {"hidden1", c.hidden1},
            {"hidden2", c.hidden2},
            {"lr", c.lr},
            {"adapt_lr", c.adapt_lr},
            {"allow_any_lr", c.allow_any_lr},
            {"batch_size", c.batch_size},
            {"pretrain_epochs", c.pretrain_epochs},
            {"adapt_epochs", c.adapt_epochs},
            {"oracle_epochs", c.oracle_epochs},
            {"patience", c.patience},
            {"lambda_adv", c.lambda_adv},
            {"early_bird_fraction", c.early_bird_fraction},
            {"peer_count", c.peer_count},
            {"x", c.x},
            {"recommend_mode", c.recommend_mode == RecommendMode::frontier ? "frontier" : "uniform"},
            {"oracle", c.oracle},
            {"seed", c.seed},
            {"deterministic", c.deterministic},
            {"synth", c.synth}};
}

/// Overlay the keys present in `j` onto `c`. Unknown keys are rejected so
/// typos do not silently fall back to defaults.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw UsageError("config: top level must be a JSON object");
    const auto known = to_json(RunConfig{});
    for (const auto& [k, v] : j.items())
        if (!known.contains(k)) throw UsageError("config: unknown key '" + k + "'");
    try {
        c.corpus = j.value("corpus", c.corpus);
        c.out = j.value("out", c.out);
        c.checkpoint = j.value("checkpoint", c.checkpoint);
        c.target_domain = j.value("target_domain", c.target_domain);
        if (j.contains("cdm")) c.cdm = parse_cdm_kind(j["cdm"].get<std::string>());
        c.dim = j.value("dim", c.dim);
        c.hidden1 = j.value("hidden1", c.hidden1);
        c.hidden2 = j.value("hidden2", c.hidden2);
        c.lr = j.value("lr", c.lr);
        c.adapt_lr = j.value("adapt_lr", c.adapt_lr);
        c.allow_any_lr = j.value("allow_any_lr", c.allow_any_lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
        c.adapt_epochs = j.value("adapt_epochs", c.adapt_epochs);
        c.oracle_epochs = j.value("oracle_epochs", c.oracle_epochs);
        c.patience = j.value("patience", c.patience);
        c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
        c.early_bird_fraction = j.value("early_bird_fraction", c.early_bird_fraction);
        c.peer_count = j.value("peer_count", c.peer_count);
        c.x = j.value("x", c.x);
        if (j.contains("recommend_mode")) {
            const auto m = j["recommend_mode"].get<std::string>();
            if (m != "uniform" && m != "frontier") throw UsageError("config: recommend_mode must be uniform or frontier");
            c.recommend_mode = m == "frontier" ? RecommendMode::frontier : RecommendMode::uniform;
        }
        c.oracle = j.value("oracle", c.oracle);
        c.seed = j.value("seed", c.seed);
        c.deterministic = j.value("deterministic", c.deterministic);
        if (j.contains("synth")) from_json(j["synth"], c.synth);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError(path.string() + ": malformed JSON: " + e.what());
    }
    apply_json(c, j);
    return c;
}

inline bool documented_lr(double lr) {
    return std::any_of(kLearningRates.begin(), kLearningRates.end(), [&](double v) { return std::abs(v - lr) < 1e-12; });
}

inline void validate(const RunConfig& c) {
    if (c.dim < 1 || c.hidden1 < 1 || c.hidden2 < 1) throw UsageError("dim and hidden sizes must be positive");
    if (c.batch_size < 1) throw UsageError("batch size must be positive");
    if (c.pretrain_epochs < 0 || c.adapt_epochs < 0 || c.oracle_epochs < 0) throw UsageError("epochs must be nonnegative");
    if (c.patience < 1) throw UsageError("patience must be positive");
    if (!(c.lr > 0.0) || !(c.adapt_lr > 0.0)) throw UsageError("learning rates must be positive");
    if (!c.allow_any_lr && (!documented_lr(c.lr) || !documented_lr(c.adapt_lr)))
        throw UsageError("learning rate must be one of 0.001, 0.002, 0.02, 0.05 (set allow_any_lr to override)");
    if (!(c.lambda_adv >= 0.0)) throw UsageError("lambda_adv must be nonnegative");
    if (!(c.early_bird_fraction > 0.0 && c.early_bird_fraction <= 1.0))
        throw UsageError("early-bird fraction must lie in (0, 1]");
    if (c.peer_count < 1) throw UsageError("peer count must be >= 1");
    if (c.x < 2 || c.x % 2 != 0) throw UsageError("x must be an even number >= 2");
    validate(c.synth);
}

/// Digest of everything that affects results. Paths and the determinism
/// switch are left out so relocating a run does not change it.
inline std::string config_digest(const RunConfig& c) {
    auto j = to_json(c);
    for (const char* k : {"corpus", "out", "checkpoint", "deterministic"}) j.erase(k);
    return hex_digest(fnv1a64(j.dump()));
}

inline PretrainConfig pretrain_config(const RunConfig& c) {
    PretrainConfig p;
    p.kind = c.cdm;
    p.dim = c.dim;
    p.hidden1 = c.hidden1;
    p.hidden2 = c.hidden2;
    p.lr = c.lr;
    p.batch_size = c.batch_size;
    p.epochs = c.pretrain_epochs;
    p.patience = c.patience;
    p.lambda_adv = c.lambda_adv;
    p.seed = c.seed;
    return p;
}

inline AdaptConfig adapt_config(const RunConfig& c) {
    AdaptConfig a;
    a.early_bird_fraction = c.early_bird_fraction;
    a.peer_count = c.peer_count;
    a.finetune.lr = c.adapt_lr;
    a.finetune.batch_size = c.batch_size;
    a.finetune.epochs = c.adapt_epochs;
    a.finetune.patience = c.patience;
    a.seed = derive_seed(c.seed, 2);
    return a;
}

inline OracleConfig oracle_config(const RunConfig& c) {
    OracleConfig o;
    o.kind = c.cdm;
    o.dim = c.dim;
    o.hidden1 = c.hidden1;
    o.hidden2 = c.hidden2;
    o.lr = c.lr;
    o.batch_size = c.batch_size;
    o.epochs = c.oracle_epochs;
    o.patience = c.patience;
    o.seed = derive_seed(c.seed, 3);
    return o;
}

inline std::filesystem::path out_path(const RunConfig& c, const char* name) { return std::filesystem::path(c.out) / name; }

inline std::filesystem::path checkpoint_in(const RunConfig& c, const char* fallback) {
    return c.checkpoint.empty() ? out_path(c, fallback) : std::filesystem::path(c.checkpoint);
}

struct Corpus {
    std::vector<DomainDataset> datasets; // target role assigned
    std::string digest;

    const DomainDataset& target() const {
        for (const auto& d : datasets)
            if (d.role == DomainRole::target) return d;
        throw DataError("corpus has no target domain");
    }

    std::vector<DomainDataset> sources() const {
        std::vector<DomainDataset> out;
        for (const auto& d : datasets)
            if (d.role == DomainRole::source) out.push_back(d);
        return out;
    }
};

inline Corpus load_run_corpus(const RunConfig& c) {
    Corpus k;
    k.datasets = assign_target(load_corpus(c.corpus), c.target_domain);
    k.digest = corpus_digest(k.datasets);
    return k;
}

inline void require_same_corpus(const Checkpoint& ck, const Corpus& corpus) {
    if (ck.bundle.corpus_digest != corpus.digest)
        throw DataError("checkpoint was trained on corpus " + ck.bundle.corpus_digest + " but the given corpus is " +
                        corpus.digest);
}

// ---------------------------------------------------------------- commands

inline SynthResult cmd_synth(const RunConfig& c) {
    validate(c);
    auto res = generate(c.synth, c.seed);
    write_corpus(res.datasets, c.out);
    export_truth(res.truth, out_path(c, "truth.json"));
    detail::write_file(out_path(c, "synth_config.json"),
                       nlohmann::json{{"seed", c.seed}, {"synth", c.synth}}.dump(2) + "\n");
    return res;
}

/// Pretrain on in-memory data; the corpus digest ties the result to its input.
inline Checkpoint pretrain_checkpoint(const RunConfig& c, const Corpus& corpus) {
    Checkpoint ck;
    ck.bundle = pretrain(corpus.sources(), pretrain_config(c));
    ck.bundle.corpus_digest = corpus.digest;
    ck.config_digest = config_digest(c);
    return ck;
}

inline Checkpoint cmd_pretrain(const RunConfig& c) {
    validate(c);
    const Corpus corpus = load_run_corpus(c);
    Checkpoint ck = pretrain_checkpoint(c, corpus);
    std::filesystem::create_directories(c.out);
    save_checkpoint(ck, c.checkpoint.empty() ? out_path(c, "pretrained.json") : std::filesystem::path(c.checkpoint));
    return ck;
}

inline nlohmann::json to_json(const FinetuneStats& s) {
    nlohmann::json j = {{"epochs_run", s.epochs_run},
                        {"best_epoch", s.best_epoch},
                        {"train_logs", s.train_logs},
                        {"holdout_logs", s.holdout_logs},
                        {"best_holdout_loss", s.best_holdout_loss}};
    if (!s.warning.empty()) j["warning"] = s.warning;
    return j;
}

struct AdaptOutput {
    Checkpoint checkpoint;
    AdaptResult result;
};

inline AdaptOutput adapt_checkpoint(const RunConfig& c, Checkpoint ck, const Corpus& corpus) {
    require_same_corpus(ck, corpus);
    const auto& target = corpus.target();
    AdaptOutput out;
    out.result = run_adaptation(ck.bundle, target, adapt_config(c));
    Adaptation a;
    a.target_domain = target.domain_id;
    a.early_birds = out.result.split.early_bird_ids;
    a.states = out.result.states;
    a.reference_domains = out.result.simulated.reference_domains;
    a.config_digest = config_digest(c);
    a.info = {{"early_bird", to_json(out.result.early_bird_stats)},
              {"cold_start", to_json(out.result.cold_start_stats)},
              {"simulated_logs", out.result.simulated.logs.size()},
              {"peer_count", c.peer_count},
              {"early_bird_fraction", c.early_bird_fraction}};
    ck.adaptation = std::move(a);
    out.checkpoint = std::move(ck);
    return out;
}

inline AdaptOutput cmd_adapt(const RunConfig& c) {
    validate(c);
    const Corpus corpus = load_run_corpus(c);
    auto out = adapt_checkpoint(c, load_checkpoint(checkpoint_in(c, "pretrained.json")), corpus);
    std::filesystem::create_directories(c.out);
    save_checkpoint(out.checkpoint, out_path(c, "adapted.json"));
    detail::write_file(out_path(c, "simulated_logs.csv"), format_simulated_csv(out.result.simulated));
    return out;
}

/// Unseen-student target logs as (student, question, score) in corpus order.
inline std::vector<PracticeLog> unseen_logs(const Adaptation& a, const DomainDataset& target) {
    std::vector<PracticeLog> out;
    for (const auto& l : target.logs)
        if (!std::binary_search(a.early_birds.begin(), a.early_birds.end(), l.student_id)) out.push_back(l);
    return out;
}

inline EvalRow score_states(const std::string& name, const CdmModel& m, const TargetStates& states,
                            const DomainEmbedding& emb, const std::vector<PracticeLog>& logs) {
    std::vector<double> preds;
    std::vector<int> labels;
    for (const auto& l : logs) {
        preds.push_back(predict_target(m, states, emb, l.student_id, l.question_id));
        labels.push_back(l.score);
    }
    return score_predictions(name, Cohort::unseen, preds, labels);
}

/// Spearman between each student's mean diagnosed mastery and their mean
/// ground-truth shared ability.
inline double mastery_spearman(const PretrainedBundle& bundle, const TargetStates& states, const DomainEmbedding& emb,
                               const GroundTruth& truth, const std::vector<StudentId>& students) {
    std::vector<double> diag, gt;
    for (const auto& s : students) {
        diag.push_back(diagnose(bundle, states, s, emb).mean());
        const auto& a = truth.shared_ability.at(s);
        double sum = 0.0;
        for (double v : a) sum += v;
        gt.push_back(sum / static_cast<double>(a.size()));
    }
    return spearman(diag, gt);
}

inline EvalReport evaluate_checkpoint(const RunConfig& c, const Checkpoint& ck, const Corpus& corpus,
                                      const GroundTruth* truth) {
    require_same_corpus(ck, corpus);
    if (!ck.adaptation) throw DataError("checkpoint has no adapted target states; run adapt first");
    const auto& a = *ck.adaptation;
    const auto& target = corpus.target();
    if (target.domain_id != a.target_domain)
        throw DataError("checkpoint was adapted to " + a.target_domain + ", corpus target is " + target.domain_id);
    const auto logs = unseen_logs(a, target);
    if (logs.empty()) throw DataError("no unseen-student logs to evaluate");
    const DomainEmbedding emb = embed_domain(target, ck.bundle.config.dim);

    EvalReport rep;
    rep.config_digest = config_digest(c);
    rep.corpus_digest = corpus.digest;
    rep.rows.push_back(score_states("zero", ck.bundle.model, a.states, emb, logs));
    std::vector<int> labels;
    for (const auto& l : logs) labels.push_back(l.score);
    rep.rows.push_back(random_baseline(labels, derive_seed(c.seed, 4)));
    if (c.oracle) rep.rows.push_back(oracle_mode(target, oracle_config(c)));

    const TargetStates avg = init_target_states(ck.bundle, target.students);
    rep.extra["average_init_auc"] = score_states("average", ck.bundle.model, avg, emb, logs).auc;
    if (truth) {
        std::vector<StudentId> unseen;
        for (const auto& s : target.students)
            if (!std::binary_search(a.early_birds.begin(), a.early_birds.end(), s)) unseen.push_back(s);
        rep.extra["mastery_spearman"] = mastery_spearman(ck.bundle, a.states, emb, *truth, unseen);
    }
    return rep;
}

inline EvalReport cmd_eval(const RunConfig& c) {
    validate(c);
    const Corpus corpus = load_run_corpus(c);
    const Checkpoint ck = load_checkpoint(checkpoint_in(c, "adapted.json"));
    std::optional<GroundTruth> truth;
    const auto truth_path = std::filesystem::path(c.corpus) / "truth.json";
    if (std::filesystem::exists(truth_path)) truth = import_truth(truth_path);
    EvalReport rep = evaluate_checkpoint(c, ck, corpus, truth ? &*truth : nullptr);
    std::filesystem::create_directories(c.out);
    detail::write_file(out_path(c, "eval.json"), format_report_json(rep));
    detail::write_file(out_path(c, "eval.txt"), format_report_text(rep));
    return rep;
}

inline RecommendationList recommend_from(const RunConfig& c, const Checkpoint& ck, const Corpus& corpus,
                                         const StudentId& student) {
    require_same_corpus(ck, corpus);
    if (!ck.adaptation) throw DataError("checkpoint has no adapted target states; run adapt first");
    const auto& target = corpus.target();
    const DomainEmbedding emb = embed_domain(target, ck.bundle.config.dim);
    return recommend(ck.bundle.model, ck.adaptation->states, target, emb, student, c.x,
                     derive_seed(derive_seed(c.seed, 5), fnv1a64(student)), c.recommend_mode);
}

inline std::string safe_filename(std::string s) {
    for (auto& ch : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
        if (!ok) ch = '_';
    }
    return s;
}

inline RecommendationList cmd_recommend(const RunConfig& c, const StudentId& student) {
    validate(c);
    const Corpus corpus = load_run_corpus(c);
    const auto list = recommend_from(c, load_checkpoint(checkpoint_in(c, "adapted.json")), corpus, student);
    std::filesystem::create_directories(c.out);
    detail::write_file(out_path(c, ("recommend-" + safe_filename(student) + ".json").c_str()), to_json(list).dump(2) + "\n");
    return list;
}

} // namespace xcd
