#pragma once

// JSON checkpoints. Layout:
//
//   meta          seed, F, hyperparameters, domain registry, digests, shapes
//   params        name -> flat row-major array ("cdm/...", "heads/...", "emb/<domain>")
//   students      domain -> row order of "emb/<domain>"
//   states        student -> domain -> {sha, spe}
//   adaptation    (after adapt) target domain, early birds, reference domains
//   target_states (after adapt) student -> {u, refined}
//
// Doubles are written in shortest round-trip form, so load followed by save
// reproduces the file byte for byte.

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "xcd/adapt.hpp"
#include "xcd/data_model.hpp"
#include "xcd/decouple.hpp"
#include "xcd/errors.hpp"

namespace xcd {

struct Adaptation {
    DomainId target_domain;
    std::vector<StudentId> early_birds; // sorted
    TargetStates states;
    std::map<StudentId, DomainId> reference_domains;
    std::string config_digest;
    nlohmann::json info = nlohmann::json::object(); // fine-tuning statistics
};

struct Checkpoint {
    PretrainedBundle bundle;
    std::string config_digest;
    std::optional<Adaptation> adaptation;
};

namespace detail {

inline nlohmann::json flat(const Eigen::MatrixXd& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
    return a;
}

inline nlohmann::json flat(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::MatrixXd unflat(const nlohmann::json& a, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != rows * cols)
        throw DataError("checkpoint: parameter " + name + " has the wrong size");
    Eigen::MatrixXd m(rows, cols);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (!a[i].is_number()) throw DataError("checkpoint: parameter " + name + " holds a non-number");
            m(r, c) = a[i++].get<double>();
        }
    return m;
}

inline Eigen::VectorXd unflat_vec(const nlohmann::json& a, Eigen::Index n, const std::string& name) {
    return unflat(a, n, 1, name).col(0);
}

inline nlohmann::json pretrain_config_json(const PretrainConfig& c) {
    return {{"cdm", to_string(c.kind)},   {"dim", c.dim},
            {"hidden1", c.hidden1},       {"hidden2", c.hidden2},
            {"interaction_width", c.interaction_width},
            {"lr", c.lr},                 {"batch_size", c.batch_size},
            {"epochs", c.epochs},         {"patience", c.patience},
            {"lambda_adv", c.lambda_adv}};
}

inline PretrainConfig pretrain_config_from(const nlohmann::json& h, std::uint64_t seed) {
    PretrainConfig c;
    c.kind = parse_cdm_kind(h.at("cdm").get<std::string>());
    c.dim = h.at("dim").get<int>();
    c.hidden1 = h.at("hidden1").get<int>();
    c.hidden2 = h.at("hidden2").get<int>();
    c.interaction_width = h.at("interaction_width").get<int>();
    c.lr = h.at("lr").get<double>();
    c.batch_size = h.at("batch_size").get<int>();
    c.epochs = h.at("epochs").get<int>();
    c.patience = h.at("patience").get<int>();
    c.lambda_adv = h.at("lambda_adv").get<double>();
    c.seed = seed;
    return c;
}

template <class Ck, class Visit>
void each_named_param(Ck& ck, Visit&& visit) {
    ck.bundle.model.for_each_param([&](std::string_view n, auto& m) { visit("cdm/" + std::string(n), m); });
    ck.bundle.heads.for_each_param([&](std::string_view n, auto& m) { visit("heads/" + std::string(n), m); });
    for (auto& [dom, m] : ck.bundle.student_embeddings) visit("emb/" + dom, m);
}

} // namespace detail

inline std::string format_checkpoint(const Checkpoint& ck) {
    const auto& b = ck.bundle;
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json shapes = nlohmann::json::object();
    detail::each_named_param(ck, [&](const std::string& name, const Eigen::MatrixXd& m) {
        params[name] = detail::flat(m);
        shapes[name] = {m.rows(), m.cols()};
    });

    nlohmann::json stats = {{"epochs_run", b.stats.epochs_run},
                            {"best_epoch", b.stats.best_epoch},
                            {"best_validation_loss", b.stats.best_validation_loss},
                            {"train_loss", b.stats.train_loss},
                            {"validation_loss", b.stats.validation_loss}};
    nlohmann::json meta = {{"format", "xcd-checkpoint/1"},
                           {"seed", b.config.seed},
                           {"F", b.config.dim},
                           {"hyperparams", detail::pretrain_config_json(b.config)},
                           {"source_domains", b.source_domains},
                           {"corpus_digest", b.corpus_digest},
                           {"config_digest", ck.config_digest},
                           {"param_shapes", shapes},
                           {"pretrain_stats", stats}};

    nlohmann::json states = nlohmann::json::object();
    for (const auto& [s, per] : b.states) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [d, st] : per) j[d] = {{"sha", detail::flat(st.shared)}, {"spe", detail::flat(st.specific)}};
        states[s] = std::move(j);
    }

    nlohmann::json out = {{"meta", meta}, {"params", params}, {"students", b.domain_students}, {"states", states}};
    if (ck.adaptation) {
        const auto& a = *ck.adaptation;
        out["adaptation"] = {{"target_domain", a.target_domain},
                             {"early_birds", a.early_birds},
                             {"reference_domains", a.reference_domains},
                             {"config_digest", a.config_digest},
                             {"info", a.info}};
        nlohmann::json ts = nlohmann::json::object();
        for (std::size_t r = 0; r < a.states.size(); ++r)
            ts[a.states.students[r]] = {{"u", detail::flat(Eigen::VectorXd(a.states.vecs.row(static_cast<Eigen::Index>(r)).transpose()))},
                                        {"refined", a.states.refined[r] != 0}};
        out["target_states"] = std::move(ts);
    }
    return out.dump() + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text, const std::string& origin = "checkpoint") {
    try {
        const auto j = nlohmann::json::parse(text);
        const auto& meta = j.at("meta");
        if (meta.at("format").get<std::string>() != "xcd-checkpoint/1")
            throw DataError(origin + ": unsupported checkpoint format");
        Checkpoint ck;
        auto& b = ck.bundle;
        b.config = detail::pretrain_config_from(meta.at("hyperparams"), meta.at("seed").get<std::uint64_t>());
        if (meta.at("F").get<int>() != b.config.dim) throw DataError(origin + ": F disagrees with hyperparameters");
        b.source_domains = meta.at("source_domains").get<std::vector<DomainId>>();
        b.corpus_digest = meta.at("corpus_digest").get<std::string>();
        ck.config_digest = meta.at("config_digest").get<std::string>();
        const auto& st = meta.at("pretrain_stats");
        b.stats.epochs_run = st.at("epochs_run").get<int>();
        b.stats.best_epoch = st.at("best_epoch").get<int>();
        b.stats.best_validation_loss = st.at("best_validation_loss").is_null()
                                         ? std::numeric_limits<double>::infinity()
                                         : st.at("best_validation_loss").get<double>();
        b.stats.train_loss = st.at("train_loss").get<std::vector<double>>();
        b.stats.validation_loss = st.at("validation_loss").get<std::vector<double>>();

        b.model.shape = CdmShape{b.config.kind, b.config.dim, b.config.interaction_width, b.config.hidden1, b.config.hidden2};
        b.domain_students = j.at("students").get<std::map<DomainId, std::vector<StudentId>>>();
        for (const auto& d : b.source_domains) {
            if (!b.domain_students.count(d)) throw DataError(origin + ": no student list for domain " + d);
            b.student_embeddings[d] = Eigen::MatrixXd();
        }
        const auto& shapes = meta.at("param_shapes");
        const auto& params = j.at("params");
        std::size_t seen = 0;
        detail::each_named_param(ck, [&](const std::string& name, Eigen::MatrixXd& m) {
            if (!shapes.contains(name) || !params.contains(name))
                throw DataError(origin + ": missing parameter " + name);
            const auto shape = shapes.at(name).get<std::vector<Eigen::Index>>();
            if (shape.size() != 2) throw DataError(origin + ": bad shape for " + name);
            m = detail::unflat(params.at(name), shape[0], shape[1], name);
            ++seen;
        });
        if (seen != params.size()) throw DataError(origin + ": unexpected extra parameters");
        const Eigen::Index F = b.config.dim;
        for (const auto& [d, m] : b.student_embeddings) {
            if (m.cols() != F || m.rows() != static_cast<Eigen::Index>(b.domain_students.at(d).size()))
                throw DataError(origin + ": embedding table of " + d + " does not match its student list");
        }

        for (const auto& [s, per] : j.at("states").items()) {
            for (const auto& [d, v] : per.items()) {
                b.states[s][d] = StudentStates{detail::unflat_vec(v.at("sha"), F, "states/" + s + "/" + d),
                                               detail::unflat_vec(v.at("spe"), F, "states/" + s + "/" + d)};
            }
        }

        if (j.contains("adaptation")) {
            const auto& a = j.at("adaptation");
            Adaptation ad;
            ad.target_domain = a.at("target_domain").get<DomainId>();
            ad.early_birds = a.at("early_birds").get<std::vector<StudentId>>();
            ad.reference_domains = a.at("reference_domains").get<std::map<StudentId, DomainId>>();
            ad.config_digest = a.at("config_digest").get<std::string>();
            ad.info = a.at("info");
            const auto& ts = j.at("target_states");
            ad.states.vecs.resize(static_cast<Eigen::Index>(ts.size()), F);
            Eigen::Index r = 0;
            for (const auto& [s, v] : ts.items()) { // object keys iterate sorted
                ad.states.students.push_back(s);
                ad.states.vecs.row(r++) = detail::unflat_vec(v.at("u"), F, "target_states/" + s).transpose();
                ad.states.refined.push_back(v.at("refined").get<bool>() ? 1 : 0);
            }
            ck.adaptation = std::move(ad);
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": malformed checkpoint: " + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    detail::write_file(path, format_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(detail::read_file(path), path.string());
}

} // namespace xcd
