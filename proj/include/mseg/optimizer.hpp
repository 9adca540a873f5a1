#pragma once

#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace mseg {

struct OptimizerConfig {
    double mu = 0.9;
    std::size_t batches_per_iteration = 5;  // N
    double alpha_init = 0.25;
    double alpha_min = 0.001;
    std::size_t window = 200;  // F, constrained even
    double d_loss = 0.98;

    void validate() const {
        if (mu < 0 || mu >= 1) throw std::invalid_argument("optimizer: mu must be in [0,1)");
        if (batches_per_iteration < 1) throw std::invalid_argument("optimizer: N must be >= 1");
        if (alpha_min <= 0 || alpha_init < alpha_min)
            throw std::invalid_argument("optimizer: need 0 < alpha_min <= alpha_init");
        if (window < 2 || window % 2 != 0)
            throw std::invalid_argument("optimizer: F must be even and >= 2");
        if (d_loss <= 0 || d_loss >= 1)
            throw std::invalid_argument("optimizer: d_loss must be in (0,1)");
    }
};

// Sum (not mean) of per-batch gradients; non-finite components abort with
// the offending batch index.
template <class T>
void accumulate_gradient(std::vector<T>& total, const std::vector<T>& batch_grad,
                         std::size_t batch_index) {
    if (total.size() != batch_grad.size())
        throw std::invalid_argument("accumulate_gradient: dimension mismatch");
    for (std::size_t i = 0; i < batch_grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(batch_grad[i])))
            throw std::runtime_error("non-finite gradient in batch " +
                                     std::to_string(batch_index));
        total[i] += batch_grad[i];
    }
}

// Momentum SGD with gradient normalization and the windowed relative-decrease
// learning-rate schedule: v <- mu v - alpha g/|g|, theta <- theta + v. Every F
// iterations the mean loss over the last F/2 iterations is compared with the
// mean over the previous F/2; an insufficient decrease halves alpha (floored
// at alpha_min), and two insufficient decreases in a row double F.
template <class T>
class NormSgd {
public:
    explicit NormSgd(const OptimizerConfig& cfg, std::size_t param_count)
        : cfg_(cfg), v_(param_count, T(0)), alpha_(cfg.alpha_init), window_(cfg.window) {
        cfg_.validate();
    }

    double alpha() const { return alpha_; }
    std::size_t window() const { return window_; }
    const std::vector<T>& velocity() const { return v_; }

    // Returns false (no-op) on a zero-norm gradient.
    bool step(std::vector<T>& params, const std::vector<T>& gradient) {
        if (params.size() != v_.size() || gradient.size() != v_.size())
            throw std::invalid_argument("step: dimension mismatch");
        double norm_sq = 0;
        for (T gv : gradient) norm_sq += static_cast<double>(gv) * static_cast<double>(gv);
        const double norm = std::sqrt(norm_sq);
        if (norm == 0) return false;
        const T mu = static_cast<T>(cfg_.mu);
        const T scale = static_cast<T>(alpha_ / norm);
        for (std::size_t i = 0; i < v_.size(); ++i) {
            v_[i] = mu * v_[i] - scale * gradient[i];
            params[i] += v_[i];
        }
        return true;
    }

    void schedule_update(double iteration_loss) {
        loss_history_.push_back(iteration_loss);
        while (loss_history_.size() > window_) loss_history_.pop_front();
        ++iterations_since_check_;
        if (iterations_since_check_ < window_ || loss_history_.size() < window_) return;
        iterations_since_check_ = 0;
        const std::size_t half = window_ / 2;
        double prev = 0, cur = 0;
        for (std::size_t i = 0; i < half; ++i) prev += loss_history_[i];
        for (std::size_t i = half; i < window_; ++i) cur += loss_history_[i];
        prev /= static_cast<double>(half);
        cur /= static_cast<double>(half);
        if (cur > cfg_.d_loss * prev) {
            alpha_ = std::max(alpha_ / 2.0, cfg_.alpha_min);
            if (insufficient_) {
                window_ *= 2;
                insufficient_ = false;
            } else {
                insufficient_ = true;
            }
        } else {
            insufficient_ = false;
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<T> v_;
    double alpha_;
    std::size_t window_;
    std::deque<double> loss_history_;
    std::size_t iterations_since_check_ = 0;
    bool insufficient_ = false;
};

}  // namespace mseg
