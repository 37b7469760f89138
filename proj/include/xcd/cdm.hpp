#pragma once

// Diagnostic functions (IRT, MIRT, NeuralCD) over F-dimensional student and
// question vectors and a K x F concept matrix C.
//
// Concept fusion is shared by all domains and works for any K:
//
//   z_u = [u ; mean(C) o u],  h_u = W_u z_u + b_u,  s_u = C h_u   (K logits)
//   z_v = [v ; mean(C) o v],  h_v = W_v z_v + b_v,  s_v = C h_v
//
//   IRT       y = sigmoid(<a, h_u> - (<b, h_v> + b0))
//   MIRT      y = sigmoid(<sigmoid(s_u), softplus(s_v)> - (<b, h_v> + b0))
//   NeuralCD  p = sigmoid(s_u), d = sigmoid(s_v)
//             x = fold(q o (p - d))   (concept c lands in slot c mod W)
//             y = sigmoid(w3 . tanh(W2 tanh(W1 x + b1) + b2) + b3),  W1, W2, w3 >= 0

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "xcd/errors.hpp"
#include "xcd/rng.hpp"

namespace xcd {

enum class CdmKind { irt, mirt, neuralcd };

inline std::string to_string(CdmKind k) {
    switch (k) {
    case CdmKind::irt: return "irt";
    case CdmKind::mirt: return "mirt";
    case CdmKind::neuralcd: return "neuralcd";
    }
    return "?";
}

inline CdmKind parse_cdm_kind(std::string_view s) {
    if (s == "irt") return CdmKind::irt;
    if (s == "mirt") return CdmKind::mirt;
    if (s == "neuralcd") return CdmKind::neuralcd;
    throw UsageError("unknown cdm kind '" + std::string(s) + "' (expected irt, mirt or neuralcd)");
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

struct CdmShape {
    CdmKind kind = CdmKind::neuralcd;
    int dim = 64;               // F
    int interaction_width = 16; // slots of the NeuralCD interaction input
    int hidden1 = 512;
    int hidden2 = 256;
};

/// Parameters of one diagnostic model. Also used as the gradient container.
struct CdmModel {
    CdmShape shape;
    Eigen::MatrixXd student_fuse_w;  // F x 2F
    Eigen::MatrixXd student_fuse_b;  // F x 1
    Eigen::MatrixXd question_fuse_w; // F x 2F
    Eigen::MatrixXd question_fuse_b; // F x 1
    Eigen::MatrixXd ability_proj;    // F x 1 (IRT)
    Eigen::MatrixXd difficulty_proj; // F x 1 (IRT, MIRT)
    Eigen::MatrixXd difficulty_bias; // 1 x 1 (IRT, MIRT)
    Eigen::MatrixXd net1_w;          // H1 x W (NeuralCD)
    Eigen::MatrixXd net1_b;          // H1 x 1
    Eigen::MatrixXd net2_w;          // H2 x H1
    Eigen::MatrixXd net2_b;          // H2 x 1
    Eigen::MatrixXd net3_w;          // 1 x H2
    Eigen::MatrixXd net3_b;          // 1 x 1

    /// Visit (name, matrix) for every parameter the kind actually uses.
    template <class Fn>
    void for_each_param(Fn&& fn) { visit(*this, fn); }
    template <class Fn>
    void for_each_param(Fn&& fn) const { visit(*this, fn); }

    CdmModel zeros_like() const {
        CdmModel z = *this;
        z.for_each_param([](std::string_view, Eigen::MatrixXd& m) { m.setZero(); });
        return z;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_param([&](std::string_view, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

private:
    template <class Self, class Fn>
    static void visit(Self& s, Fn& fn) {
        fn("student_fuse.weight", s.student_fuse_w);
        fn("student_fuse.bias", s.student_fuse_b);
        fn("question_fuse.weight", s.question_fuse_w);
        fn("question_fuse.bias", s.question_fuse_b);
        switch (s.shape.kind) {
        case CdmKind::irt:
            fn("ability_proj", s.ability_proj);
            fn("difficulty_proj", s.difficulty_proj);
            fn("difficulty_bias", s.difficulty_bias);
            break;
        case CdmKind::mirt:
            fn("difficulty_proj", s.difficulty_proj);
            fn("difficulty_bias", s.difficulty_bias);
            break;
        case CdmKind::neuralcd:
            fn("net1.weight", s.net1_w);
            fn("net1.bias", s.net1_b);
            fn("net2.weight", s.net2_w);
            fn("net2.bias", s.net2_b);
            fn("net3.weight", s.net3_w);
            fn("net3.bias", s.net3_b);
            break;
        }
    }
};

namespace detail {

inline Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double a) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

inline double glorot(Eigen::Index fan_in, Eigen::Index fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

} // namespace detail

inline CdmModel make_cdm(const CdmShape& shape, std::uint64_t seed) {
    if (shape.dim < 1 || shape.interaction_width < 1 || shape.hidden1 < 1 || shape.hidden2 < 1)
        throw UsageError("make_cdm: all dimensions must be positive");
    Rng rng(seed);
    const Eigen::Index F = shape.dim;
    CdmModel m;
    m.shape = shape;
    m.student_fuse_w = detail::uniform_matrix(rng, F, 2 * F, detail::glorot(2 * F, F));
    m.student_fuse_b = Eigen::MatrixXd::Zero(F, 1);
    m.question_fuse_w = detail::uniform_matrix(rng, F, 2 * F, detail::glorot(2 * F, F));
    m.question_fuse_b = Eigen::MatrixXd::Zero(F, 1);
    switch (shape.kind) {
    case CdmKind::irt:
        m.ability_proj = detail::uniform_matrix(rng, F, 1, detail::glorot(F, 1));
        m.difficulty_proj = detail::uniform_matrix(rng, F, 1, detail::glorot(F, 1));
        m.difficulty_bias = Eigen::MatrixXd::Zero(1, 1);
        break;
    case CdmKind::mirt:
        m.difficulty_proj = detail::uniform_matrix(rng, F, 1, detail::glorot(F, 1));
        m.difficulty_bias = Eigen::MatrixXd::Zero(1, 1);
        break;
    case CdmKind::neuralcd: {
        const Eigen::Index W = shape.interaction_width, H1 = shape.hidden1, H2 = shape.hidden2;
        m.net1_w = detail::uniform_matrix(rng, H1, W, detail::glorot(W, H1)).cwiseAbs();
        m.net1_b = Eigen::MatrixXd::Zero(H1, 1);
        m.net2_w = detail::uniform_matrix(rng, H2, H1, detail::glorot(H1, H2)).cwiseAbs();
        m.net2_b = Eigen::MatrixXd::Zero(H2, 1);
        m.net3_w = detail::uniform_matrix(rng, 1, H2, detail::glorot(H2, 1)).cwiseAbs();
        m.net3_b = Eigen::MatrixXd::Zero(1, 1);
        break;
    }
    }
    return m;
}

struct Prediction {
    double probability = 0.5;
    std::optional<Eigen::VectorXd> mastery;    // p_u (NeuralCD), theta_u (MIRT), [sigmoid(theta)] (IRT)
    std::optional<Eigen::VectorXd> difficulty; // d_v (NeuralCD only)
};

/// Concept-fused student representation.
struct StudentSide {
    Eigen::VectorXd zu, hu;
    Eigen::VectorXd mastery; // sigmoid(C h_u)  (MIRT, NeuralCD)
    double theta = 0.0;      // <a, h_u>        (IRT)
};

/// Concept-fused question representation.
struct QuestionSide {
    Eigen::VectorXd zv, hv, sv;
    Eigen::VectorXd qside; // softplus(sv) for MIRT, sigmoid(sv) for NeuralCD
    double beta = 0.0;     // <b, h_v> + b0 (IRT, MIRT)
};

/// Hidden activations of the NeuralCD interaction net.
struct InteractionTrace {
    Eigen::VectorXd x, h1, h2;
};

/// Everything backward() needs from one forward pass.
struct CdmTrace {
    Eigen::VectorXd concept_mean;
    StudentSide student;
    QuestionSide question;
    InteractionTrace net;
    double y_hat = 0.5;
};

namespace detail {

inline void check_inputs(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                         const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask) {
    const Eigen::Index F = m.shape.dim;
    if (u.size() != F || v.size() != F) throw UsageError("cdm: student/question vectors must have dimension F");
    if (concepts.cols() != F || concepts.rows() < 1) throw UsageError("cdm: concept matrix must be K x F with K >= 1");
    if (mask.size() != concepts.rows()) throw UsageError("cdm: mask length must equal concept count");
    if (!u.allFinite() || !v.allFinite() || !concepts.allFinite() || !mask.allFinite())
        throw UsageError("cdm: non-finite input");
}

inline Eigen::VectorXd fuse_input(const Eigen::VectorXd& x, const Eigen::VectorXd& concept_mean) {
    Eigen::VectorXd z(2 * x.size());
    z << x, concept_mean.cwiseProduct(x);
    return z;
}

// q o (p - d) folded into W slots.
inline Eigen::VectorXd fold_interaction(const Eigen::VectorXd& mask, const Eigen::VectorXd& p, const Eigen::VectorXd& d,
                                        Eigen::Index width) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(width);
    for (Eigen::Index c = 0; c < mask.size(); ++c) {
        if (mask[c] != 0.0) x[c % width] += mask[c] * (p[c] - d[c]);
    }
    return x;
}

inline double neural_head(const CdmModel& m, const Eigen::VectorXd& x, InteractionTrace* t) {
    Eigen::VectorXd h1 = (m.net1_w * x + m.net1_b.col(0)).array().tanh().matrix();
    Eigen::VectorXd h2 = (m.net2_w * h1 + m.net2_b.col(0)).array().tanh().matrix();
    const double logit = m.net3_w.row(0).dot(h2) + m.net3_b(0, 0);
    if (t) {
        t->x = x;
        t->h1 = std::move(h1);
        t->h2 = std::move(h2);
    }
    return sigmoid(logit);
}

} // namespace detail

inline Eigen::VectorXd concept_mean_of(const Eigen::MatrixXd& concepts) {
    return concepts.colwise().mean().transpose();
}

inline StudentSide student_side(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::MatrixXd& concepts,
                                const Eigen::VectorXd& concept_mean) {
    StudentSide s;
    s.zu = detail::fuse_input(u, concept_mean);
    s.hu = m.student_fuse_w * s.zu + m.student_fuse_b.col(0);
    if (m.shape.kind == CdmKind::irt) {
        s.theta = m.ability_proj.col(0).dot(s.hu);
    } else {
        s.mastery = (concepts * s.hu).unaryExpr([](double x) { return sigmoid(x); });
    }
    return s;
}

inline QuestionSide question_side(const CdmModel& m, const Eigen::VectorXd& v, const Eigen::MatrixXd& concepts,
                                  const Eigen::VectorXd& concept_mean) {
    QuestionSide q;
    q.zv = detail::fuse_input(v, concept_mean);
    q.hv = m.question_fuse_w * q.zv + m.question_fuse_b.col(0);
    if (m.shape.kind != CdmKind::irt) q.sv = concepts * q.hv;
    if (m.shape.kind != CdmKind::neuralcd) q.beta = m.difficulty_proj.col(0).dot(q.hv) + m.difficulty_bias(0, 0);
    if (m.shape.kind == CdmKind::mirt) q.qside = q.sv.unaryExpr([](double x) { return softplus(x); });
    if (m.shape.kind == CdmKind::neuralcd) q.qside = q.sv.unaryExpr([](double x) { return sigmoid(x); });
    return q;
}

/// y_hat from the two fused sides.
inline double interact(const CdmModel& m, const StudentSide& s, const QuestionSide& q, const Eigen::VectorXd& mask,
                       InteractionTrace* t) {
    switch (m.shape.kind) {
    case CdmKind::irt: return sigmoid(s.theta - q.beta);
    case CdmKind::mirt: return sigmoid(s.mastery.dot(q.qside) - q.beta);
    case CdmKind::neuralcd:
        return detail::neural_head(m, detail::fold_interaction(mask, s.mastery, q.qside, m.shape.interaction_width), t);
    }
    return 0.5;
}

/// Backprop dy = d(objective)/d(y_hat) through the interaction. Parameter
/// gradients of the interaction go to `grad`; gradients w.r.t. h_u and h_v are
/// added to dhu and dhv.
inline void interact_backward(const CdmModel& m, const StudentSide& s, const QuestionSide& q,
                              const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask, const InteractionTrace& t,
                              double y_hat, double dy, CdmModel& grad, Eigen::VectorXd& dhu, Eigen::VectorXd& dhv) {
    const double dlogit = dy * y_hat * (1.0 - y_hat);
    switch (m.shape.kind) {
    case CdmKind::irt: {
        grad.ability_proj.col(0) += dlogit * s.hu;
        dhu += dlogit * m.ability_proj.col(0);
        grad.difficulty_proj.col(0) -= dlogit * q.hv;
        grad.difficulty_bias(0, 0) -= dlogit;
        dhv -= dlogit * m.difficulty_proj.col(0);
        break;
    }
    case CdmKind::mirt: {
        const Eigen::VectorXd dsu =
            (dlogit * q.qside).cwiseProduct(s.mastery.cwiseProduct((1.0 - s.mastery.array()).matrix()));
        // softplus' = sigmoid
        const Eigen::VectorXd dsv = (dlogit * s.mastery).cwiseProduct(q.sv.unaryExpr([](double x) { return sigmoid(x); }));
        dhu += concepts.transpose() * dsu;
        grad.difficulty_proj.col(0) -= dlogit * q.hv;
        grad.difficulty_bias(0, 0) -= dlogit;
        dhv += concepts.transpose() * dsv - dlogit * m.difficulty_proj.col(0);
        break;
    }
    case CdmKind::neuralcd: {
        grad.net3_w.row(0) += dlogit * t.h2.transpose();
        grad.net3_b(0, 0) += dlogit;
        const Eigen::VectorXd da2 =
            (dlogit * m.net3_w.row(0).transpose()).cwiseProduct((1.0 - t.h2.array().square()).matrix());
        grad.net2_w.noalias() += da2 * t.h1.transpose();
        grad.net2_b.col(0) += da2;
        const Eigen::VectorXd da1 = (m.net2_w.transpose() * da2).cwiseProduct((1.0 - t.h1.array().square()).matrix());
        grad.net1_w.noalias() += da1 * t.x.transpose();
        grad.net1_b.col(0) += da1;
        const Eigen::VectorXd dx = m.net1_w.transpose() * da1;
        const Eigen::Index W = m.shape.interaction_width;
        for (Eigen::Index c = 0; c < mask.size(); ++c) {
            if (mask[c] == 0.0) continue;
            const double dp = dx[c % W] * mask[c];
            const double dsu = dp * s.mastery[c] * (1.0 - s.mastery[c]);
            const double dsv = -dp * q.qside[c] * (1.0 - q.qside[c]);
            dhu += dsu * concepts.row(c).transpose();
            dhv += dsv * concepts.row(c).transpose();
        }
        break;
    }
    }
}

/// Backprop dh_u through the student fusion layer; d/du is added to `du` when given.
inline void student_side_backward(const CdmModel& m, const StudentSide& s, const Eigen::VectorXd& concept_mean,
                                  const Eigen::VectorXd& dhu, CdmModel& grad, Eigen::VectorXd* du) {
    const Eigen::Index F = m.shape.dim;
    grad.student_fuse_w.noalias() += dhu * s.zu.transpose();
    grad.student_fuse_b.col(0) += dhu;
    if (du) {
        const Eigen::VectorXd dz = m.student_fuse_w.transpose() * dhu;
        *du += dz.head(F) + concept_mean.cwiseProduct(dz.tail(F));
    }
}

inline void question_side_backward(const QuestionSide& q, const Eigen::VectorXd& dhv, CdmModel& grad) {
    grad.question_fuse_w.noalias() += dhv * q.zv.transpose();
    grad.question_fuse_b.col(0) += dhv;
}

/// Forward pass recording everything backward() needs. Returns y_hat.
inline double forward(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                      const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask, CdmTrace& t) {
    detail::check_inputs(m, u, v, concepts, mask);
    t.concept_mean = concept_mean_of(concepts);
    t.student = student_side(m, u, concepts, t.concept_mean);
    t.question = question_side(m, v, concepts, t.concept_mean);
    t.y_hat = interact(m, t.student, t.question, mask, &t.net);
    return t.y_hat;
}

inline Prediction predict(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                          const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask) {
    CdmTrace t;
    Prediction p;
    p.probability = forward(m, u, v, concepts, mask, t);
    if (m.shape.kind == CdmKind::irt) {
        p.mastery = Eigen::VectorXd::Constant(1, sigmoid(t.student.theta));
    } else {
        p.mastery = t.student.mastery;
    }
    if (m.shape.kind == CdmKind::neuralcd) p.difficulty = t.question.qside;
    return p;
}

/// Squared residual (y - y_hat)^2.
inline double loss(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::VectorXd& v, const Eigen::MatrixXd& concepts,
                   const Eigen::VectorXd& mask, int y) {
    CdmTrace t;
    const double r = static_cast<double>(y) - forward(m, u, v, concepts, mask, t);
    return r * r;
}

/// Accumulate d(objective)/d(params) into `grad` and, when given, d/du into `du`,
/// where dy is d(objective)/d(y_hat) for the traced forward pass.
inline void backward(const CdmModel& m, const CdmTrace& t, const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask,
                     double dy, CdmModel& grad, Eigen::VectorXd* du) {
    Eigen::VectorXd dhu = Eigen::VectorXd::Zero(m.shape.dim);
    Eigen::VectorXd dhv = Eigen::VectorXd::Zero(m.shape.dim);
    interact_backward(m, t.student, t.question, concepts, mask, t.net, t.y_hat, dy, grad, dhu, dhv);
    student_side_backward(m, t.student, t.concept_mean, dhu, grad, du);
    question_side_backward(t.question, dhv, grad);
}

struct CdmGradient {
    double loss = 0.0;
    CdmModel params;         // d loss / d parameters
    Eigen::VectorXd student; // d loss / d u
};

/// Exact gradient of the squared residual w.r.t. the student vector and all parameters.
inline CdmGradient grad(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                        const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask, int y) {
    CdmTrace t;
    const double r = static_cast<double>(y) - forward(m, u, v, concepts, mask, t);
    CdmGradient g;
    g.loss = r * r;
    g.params = m.zeros_like();
    g.student = Eigen::VectorXd::Zero(m.shape.dim);
    backward(m, t, concepts, mask, -2.0 * r, g.params, &g.student);
    return g;
}

/// Clamp NeuralCD interaction weights to be nonnegative. IRT/MIRT are
/// monotone by construction.
inline void project_monotone(CdmModel& m) {
    if (m.shape.kind != CdmKind::neuralcd) return;
    m.net1_w = m.net1_w.cwiseMax(0.0);
    m.net2_w = m.net2_w.cwiseMax(0.0);
    m.net3_w = m.net3_w.cwiseMax(0.0);
}

inline bool is_monotone(const CdmModel& m) {
    if (m.shape.kind != CdmKind::neuralcd) return true;
    return m.net1_w.minCoeff() >= 0.0 && m.net2_w.minCoeff() >= 0.0 && m.net3_w.minCoeff() >= 0.0;
}

/// Response probability given a mastery vector directly (as reported by predict),
/// holding the question side fixed. Used to probe monotonicity.
inline double response_from_mastery(const CdmModel& m, const Eigen::VectorXd& mastery, const Eigen::VectorXd& v,
                                    const Eigen::MatrixXd& concepts, const Eigen::VectorXd& mask) {
    detail::check_inputs(m, Eigen::VectorXd::Zero(m.shape.dim), v, concepts, mask);
    const QuestionSide q = question_side(m, v, concepts, concept_mean_of(concepts));
    StudentSide s;
    if (m.shape.kind == CdmKind::irt) {
        const double p = mastery[0];
        s.theta = std::log(p / (1.0 - p));
    } else {
        s.mastery = mastery;
    }
    return interact(m, s, q, mask, nullptr);
}

/// Per-concept mastery of a student: sigmoid(C h_u) for MIRT/NeuralCD, [sigmoid(theta)] for IRT.
inline Eigen::VectorXd mastery_of(const CdmModel& m, const Eigen::VectorXd& u, const Eigen::MatrixXd& concepts) {
    if (u.size() != m.shape.dim || concepts.cols() != m.shape.dim) throw UsageError("mastery_of: dimension mismatch");
    const StudentSide s = student_side(m, u, concepts, concept_mean_of(concepts));
    if (m.shape.kind == CdmKind::irt) return Eigen::VectorXd::Constant(1, sigmoid(s.theta));
    return s.mastery;
}

/// Question difficulty in (0,1): mean of d_v over the question's concepts for
/// NeuralCD, sigmoid of the scalar difficulty for IRT/MIRT.
inline double difficulty_of(const CdmModel& m, const Eigen::VectorXd& v, const Eigen::MatrixXd& concepts,
                            const Eigen::VectorXd& mask) {
    detail::check_inputs(m, Eigen::VectorXd::Zero(m.shape.dim), v, concepts, mask);
    const QuestionSide q = question_side(m, v, concepts, concept_mean_of(concepts));
    if (m.shape.kind != CdmKind::neuralcd) return sigmoid(q.beta);
    double sum = 0.0, n = 0.0;
    for (Eigen::Index c = 0; c < mask.size(); ++c) {
        if (mask[c] != 0.0) {
            sum += q.qside[c];
            n += 1.0;
        }
    }
    return n > 0.0 ? sum / n : 0.5;
}

} // namespace xcd
