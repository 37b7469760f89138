#pragma once

// Embedding layer: text-derived question vectors, concept vectors pooled from
// their questions, and randomly initialized student vectors.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "xcd/data_model.hpp"
#include "xcd/errors.hpp"
#include "xcd/hash.hpp"
#include "xcd/rng.hpp"

namespace xcd {

/// Maps question text to a fixed-width content vector.
class QuestionEncoder {
public:
    virtual ~QuestionEncoder() = default;
    virtual Eigen::VectorXd encode(std::string_view text, int dim) const = 0;
};

/// Lowercased ASCII-alphanumeric tokens. Bytes >= 0x80 stay inside tokens so
/// UTF-8 words survive; no locale is consulted.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
        if (alnum) {
            cur.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

/// Signed feature hashing: bucket = h mod F, sign from bit 63, then L2-normalized.
/// If the signs cancel exactly on non-empty text, unsigned counts are used
/// instead so every non-empty text still gets a unit vector.
inline Eigen::VectorXd encode_question_text(std::string_view text, int dim) {
    if (dim < 1) throw UsageError("encode_question_text: dimension must be >= 1");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(dim);
    for (const auto& tok : tokenize(text)) {
        const std::uint64_t h = fnv1a64(tok);
        const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
        v[bucket] += (h >> 63) ? -1.0 : 1.0;
        counts[bucket] += 1.0;
    }
    if (v.isZero(0.0)) v = counts;
    const double n = v.norm();
    if (n > 0.0) v /= n;
    return v;
}

class HashingEncoder final : public QuestionEncoder {
public:
    Eigen::VectorXd encode(std::string_view text, int dim) const override { return encode_question_text(text, dim); }
};

/// Row c = mean of the rows of questions associated with concept c.
inline Eigen::MatrixXd build_concept_vecs(const std::vector<Question>& questions,
                                          const std::map<ConceptId, std::size_t>& concept_index,
                                          const Eigen::MatrixXd& question_vecs) {
    if (question_vecs.rows() != static_cast<Eigen::Index>(questions.size()))
        throw UsageError("build_concept_vecs: one question vector per question required");
    const auto K = static_cast<Eigen::Index>(concept_index.size());
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, question_vecs.cols());
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (std::size_t i = 0; i < questions.size(); ++i) {
        for (const auto& c : questions[i].concept_ids) {
            auto it = concept_index.find(c);
            if (it == concept_index.end())
                throw UsageError("build_concept_vecs: unknown concept " + c + " on question " + questions[i].question_id);
            sums.row(static_cast<Eigen::Index>(it->second)) += question_vecs.row(static_cast<Eigen::Index>(i));
            ++counts[it->second];
        }
    }
    for (const auto& [cid, idx] : concept_index) {
        if (counts[idx] == 0) throw UsageError("build_concept_vecs: orphan concept " + cid);
        sums.row(static_cast<Eigen::Index>(idx)) /= counts[idx];
    }
    return sums;
}

/// n x F matrix, entries i.i.d. uniform in [-a, a] with a = sqrt(6/F).
inline Eigen::MatrixXd init_student_vecs(std::size_t n, int dim, std::uint64_t seed) {
    if (dim < 1) throw UsageError("init_student_vecs: dimension must be >= 1");
    const double a = std::sqrt(6.0 / dim);
    Rng rng(seed);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

/// Frozen, content-derived side of one domain.
struct DomainEmbedding {
    DomainId domain_id;
    Eigen::MatrixXd question_vecs; // |V| x F, unit rows
    Eigen::MatrixXd concept_vecs;  // |C| x F
    Eigen::VectorXd concept_mean;  // column mean of concept_vecs
    std::vector<Eigen::VectorXd> masks; // q_v per question
    std::unordered_map<QuestionId, std::size_t> question_index;

    std::size_t question(const QuestionId& q) const {
        auto it = question_index.find(q);
        if (it == question_index.end()) throw UsageError("domain " + domain_id + ": unknown question " + q);
        return it->second;
    }
};

inline DomainEmbedding embed_domain(const DomainDataset& d, int dim, const QuestionEncoder& encoder) {
    DomainEmbedding e;
    e.domain_id = d.domain_id;
    e.question_vecs.resize(static_cast<Eigen::Index>(d.questions.size()), dim);
    const auto cidx = d.concept_index();
    for (std::size_t i = 0; i < d.questions.size(); ++i) {
        e.question_vecs.row(static_cast<Eigen::Index>(i)) = encoder.encode(d.questions[i].text, dim).transpose();
        e.masks.push_back(q_mask(d.questions[i], cidx));
        e.question_index.emplace(d.questions[i].question_id, i);
    }
    e.concept_vecs = build_concept_vecs(d.questions, cidx, e.question_vecs);
    e.concept_mean = e.concept_vecs.colwise().mean().transpose();
    return e;
}

inline DomainEmbedding embed_domain(const DomainDataset& d, int dim) { return embed_domain(d, dim, HashingEncoder{}); }

} // namespace xcd
