#pragma once

// Fixtures and independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xcd/xcd.hpp"

namespace xcd::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        Rng rng(fnv1a64(tag) ^ static_cast<std::uint64_t>(std::filesystem::file_time_type::clock::now().time_since_epoch().count()));
        path_ = std::filesystem::temp_directory_path() / ("xcd-" + tag + "-" + hex_digest(rng.next_u64()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) { return detail::read_file(p); }

/// Small synthetic corpus: 2 sources + target unless overridden.
inline SynthConfig small_synth(int students = 40) {
    SynthConfig c;
    c.source_domains = 2;
    c.students = students;
    c.questions_per_domain = 24;
    c.concepts_per_domain = 4;
    c.logs_per_student = 8;
    return c;
}

inline PretrainConfig small_pretrain(CdmKind kind = CdmKind::neuralcd, std::uint64_t seed = 1) {
    PretrainConfig p;
    p.kind = kind;
    p.dim = 8;
    p.hidden1 = 8;
    p.hidden2 = 6;
    p.epochs = 3;
    p.batch_size = 64;
    p.seed = seed;
    return p;
}

inline std::vector<DomainDataset> sources_of(const std::vector<DomainDataset>& all) {
    std::vector<DomainDataset> out;
    for (const auto& d : all)
        if (d.role == DomainRole::source) out.push_back(d);
    return out;
}

inline const DomainDataset& target_of(const std::vector<DomainDataset>& all) {
    for (const auto& d : all)
        if (d.role == DomainRole::target) return d;
    throw std::logic_error("no target");
}

/// A random model/input pair for gradient and monotonicity checks.
struct RandomCase {
    CdmModel model;
    Eigen::VectorXd u, v, mask;
    Eigen::MatrixXd concepts;
    int y = 0;
};

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double a) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

inline RandomCase random_case(CdmKind kind, std::uint64_t seed) {
    Rng rng(seed);
    RandomCase rc;
    const int F = 3 + static_cast<int>(rng.below(5));
    const int K = 1 + static_cast<int>(rng.below(6));
    const int W = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
    rc.model = make_cdm(CdmShape{kind, F, W, 2 + static_cast<int>(rng.below(6)), 2 + static_cast<int>(rng.below(5))},
                        rng.next_u64());
    // Nonzero biases so no test relies on the zero-bias special case.
    rc.model.for_each_param([&](std::string_view name, Eigen::MatrixXd& m) {
        if (name.find("bias") != std::string_view::npos) m = random_matrix(rng, m.rows(), m.cols(), 0.5);
    });
    rc.u = random_matrix(rng, F, 1, 1.0).col(0);
    rc.v = random_matrix(rng, F, 1, 1.0).col(0);
    rc.concepts = random_matrix(rng, K, F, 1.0);
    rc.mask = Eigen::VectorXd::Zero(K);
    const int ones = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
    for (auto i : rng.sample_indices(static_cast<std::size_t>(K), static_cast<std::size_t>(ones)))
        rc.mask[static_cast<Eigen::Index>(i)] = 1.0;
    rc.y = rng.bernoulli(0.5) ? 1 : 0;
    return rc;
}

/// Largest relative disagreement between the analytic gradient and central
/// differences over every parameter entry and every entry of u. Entries where
/// both sides are below `floor` are compared against `floor` instead.
inline double max_gradient_error(const RandomCase& rc, double eps = 1e-4, double floor = 1e-6) {
    const auto g = grad(rc.model, rc.u, rc.v, rc.concepts, rc.mask, rc.y);
    double worst = 0.0;
    auto compare = [&](double analytic, double numeric) {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    };

    CdmModel m = rc.model;
    std::vector<Eigen::MatrixXd*> params;
    m.for_each_param([&](std::string_view, Eigen::MatrixXd& p) { params.push_back(&p); });
    std::vector<const Eigen::MatrixXd*> grads;
    g.params.for_each_param([&](std::string_view, const Eigen::MatrixXd& p) { grads.push_back(&p); });
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = *params[t];
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double keep = p.data()[i];
            p.data()[i] = keep + eps;
            const double up = loss(m, rc.u, rc.v, rc.concepts, rc.mask, rc.y);
            p.data()[i] = keep - eps;
            const double down = loss(m, rc.u, rc.v, rc.concepts, rc.mask, rc.y);
            p.data()[i] = keep;
            compare(grads[t]->data()[i], (up - down) / (2.0 * eps));
        }
    }
    Eigen::VectorXd u = rc.u;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double keep = u[i];
        u[i] = keep + eps;
        const double up = loss(rc.model, u, rc.v, rc.concepts, rc.mask, rc.y);
        u[i] = keep - eps;
        const double down = loss(rc.model, u, rc.v, rc.concepts, rc.mask, rc.y);
        u[i] = keep;
        compare(g.student[i], (up - down) / (2.0 * eps));
    }
    return worst;
}

/// Brute-force Mann-Whitney statistic by explicit pair counting.
inline double brute_auc(const std::vector<double>& preds, const std::vector<int>& labels) {
    double credit = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < preds.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (preds[i] > preds[j]) credit += 1.0;
            else if (preds[i] == preds[j]) credit += 0.5;
        }
    }
    return credit / pairs;
}

/// Cosine by explicit loops, zero vectors scoring 0.
inline double brute_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// A bundle holding only decoupled states, for peer-matching tests. States
/// are drawn from a coarse integer grid so exact ties and zero vectors occur.
inline PretrainedBundle grid_bundle(std::uint64_t seed, int students, int domains, int dim, double absent_rate = 0.15) {
    Rng rng(seed);
    PretrainedBundle b;
    b.config.dim = dim;
    for (int k = 0; k < domains; ++k) b.source_domains.push_back("d" + std::to_string(k));
    auto grid = [&] {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v[i] = static_cast<double>(static_cast<int>(rng.below(3)) - 1);
        return v;
    };
    for (int s = 0; s < students; ++s) {
        const std::string id = "u" + std::to_string(100 + s);
        for (const auto& d : b.source_domains) {
            if (rng.uniform() < absent_rate) continue;
            b.states[id][d] = StudentStates{grid(), grid()};
        }
    }
    return b;
}

} // namespace xcd::test
