#pragma once

// Prediction metrics and the report rows built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcd/errors.hpp"
#include "xcd/rng.hpp"

namespace xcd {

namespace detail {

inline void check_pairs(const std::vector<double>& preds, const std::vector<int>& labels, const char* what) {
    if (preds.size() != labels.size()) throw UsageError(std::string(what) + ": length mismatch");
    if (preds.empty()) throw UsageError(std::string(what) + ": empty input");
    for (int y : labels)
        if (y != 0 && y != 1) throw UsageError(std::string(what) + ": labels must be 0 or 1");
}

} // namespace detail

/// Fraction of predictions on the right side of 0.5 (0.5 itself counts as 1).
inline double acc(const std::vector<double>& preds, const std::vector<int>& labels) {
    detail::check_pairs(preds, labels, "acc");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += ((preds[i] >= 0.5 ? 1 : 0) == labels[i]) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

inline double rmse(const std::vector<double>& preds, const std::vector<int>& labels) {
    detail::check_pairs(preds, labels, "rmse");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = preds[i] - static_cast<double>(labels[i]);
        sum += r * r;
    }
    return std::sqrt(sum / static_cast<double>(preds.size()));
}

/// Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg), computed by sorting.
/// Counts are exact integers (ties contribute halves), so the result equals
/// pair counting bit for bit.
inline double auc(const std::vector<double>& preds, const std::vector<int>& labels) {
    detail::check_pairs(preds, labels, "auc");
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return preds[a] < preds[b]; });
    std::uint64_t pos = 0, neg = 0;
    // twice the concordance count, so tied pairs stay integral
    std::uint64_t twice = 0;
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t p = 0, n = 0;
        while (j < order.size() && preds[order[j]] == preds[order[i]]) {
            (labels[order[j]] ? p : n) += 1;
            ++j;
        }
        twice += p * (2 * neg_below + n);
        neg_below += n;
        pos += p;
        neg += n;
        i = j;
    }
    if (pos == 0 || neg == 0) throw UsageError("AUC undefined: labels contain a single class");
    return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    std::vector<double> rank(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j + 1); // mean of ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t) rank[order[t]] = r;
        i = j;
    }
    return rank;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw UsageError("pearson: need two equal-length samples of size >= 2");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw UsageError("pearson: constant sample");
    return sxy / std::sqrt(sxx * syy);
}

/// Spearman rank correlation (Pearson on average ranks).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(average_ranks(x), average_ranks(y));
}

enum class Cohort { unseen, early_bird, all };

inline std::string to_string(Cohort c) {
    switch (c) {
    case Cohort::unseen: return "unseen";
    case Cohort::early_bird: return "early_bird";
    case Cohort::all: return "all";
    }
    return "?";
}

struct EvalRow {
    std::string name;
    Cohort cohort = Cohort::unseen;
    std::size_t n_logs = 0;
    double acc = 0.0;
    double auc = 0.0;
    double rmse = 0.0;
};

inline EvalRow score_predictions(std::string name, Cohort cohort, const std::vector<double>& preds,
                                 const std::vector<int>& labels) {
    EvalRow r;
    r.name = std::move(name);
    r.cohort = cohort;
    r.n_logs = preds.size();
    r.acc = acc(preds, labels);
    r.auc = auc(preds, labels);
    r.rmse = rmse(preds, labels);
    return r;
}

/// Uniform(0,1) predictions scored against the labels.
inline EvalRow random_baseline(const std::vector<int>& labels, std::uint64_t seed, Cohort cohort = Cohort::unseen) {
    Rng rng(seed);
    std::vector<double> preds(labels.size());
    for (auto& p : preds) p = rng.uniform();
    return score_predictions("random", cohort, preds, labels);
}

struct EvalReport {
    std::string config_digest;
    std::string corpus_digest;
    std::vector<EvalRow> rows;
    nlohmann::json extra = nlohmann::json::object(); // free-form diagnostics
};

inline nlohmann::json to_json(const EvalRow& r) {
    return {{"name", r.name}, {"cohort", to_string(r.cohort)}, {"n_logs", r.n_logs},
            {"acc", r.acc},   {"auc", r.auc},                  {"rmse", r.rmse}};
}

inline std::string format_report_json(const EvalReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) rows.push_back(to_json(r));
    nlohmann::json j = {{"config_digest", rep.config_digest}, {"corpus_digest", rep.corpus_digest}, {"rows", rows}};
    if (!rep.extra.empty()) j["extra"] = rep.extra;
    return j.dump(2) + "\n";
}

inline std::string format_report_text(const EvalReport& rep) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %-11s %8s %8s %8s %8s\n", "model", "cohort", "n_logs", "acc", "auc", "rmse");
    out += buf;
    for (const auto& r : rep.rows) {
        std::snprintf(buf, sizeof buf, "%-10s %-11s %8zu %8.4f %8.4f %8.4f\n", r.name.c_str(), to_string(r.cohort).c_str(),
                      r.n_logs, r.acc, r.auc, r.rmse);
        out += buf;
    }
    return out;
}

} // namespace xcd
