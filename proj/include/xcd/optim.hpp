#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace xcd {

struct AdamConfig {
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over an ordered set of parameter slots. Call begin_step() once per
/// step, then update() for every slot in the same order each time.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void begin_step() { ++t_; }

    void update(std::size_t slot, Eigen::MatrixXd& param, const Eigen::MatrixXd& grad) {
        if (slot >= m_.size()) {
            m_.resize(slot + 1);
            v_.resize(slot + 1);
        }
        auto& m = m_[slot];
        auto& v = v_[slot];
        if (m.size() == 0) {
            m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
            v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
        }
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const double step = cfg_.lr / c1;
        param.array() -= step * m.array() / ((v.array() / c2).sqrt() + cfg_.eps);
    }

    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<Eigen::MatrixXd> m_, v_;
};

} // namespace xcd
