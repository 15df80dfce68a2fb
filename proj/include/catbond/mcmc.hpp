#pragma once

// Shared chain bookkeeping for the samplers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "catbond/errors.hpp"
#include "catbond/random.hpp"

namespace catbond::mcmc {

struct McmcConfig {
    int n_iter = 1000;
    int burn_in = 500;
    int thin = 1;
    std::uint64_t seed = 1;
    int n_chains = 1;

    void validate() const {
        if (n_iter <= burn_in)
            throw ConfigError("mcmc: n_iter (" + std::to_string(n_iter) + ") must exceed burn_in (" +
                              std::to_string(burn_in) + ")");
        if (burn_in < 0) throw ConfigError("mcmc: burn_in must be nonnegative");
        if (thin < 1) throw ConfigError("mcmc: thin must be at least 1");
        if (n_chains < 1) throw ConfigError("mcmc: n_chains must be at least 1");
    }

    /// Iterations after burn-in are 1-based; every thin-th one is kept.
    bool retained(int iter) const { return iter >= burn_in && (iter - burn_in + 1) % thin == 0; }

    std::size_t draws_per_chain() const { return std::size_t((n_iter - burn_in) / thin); }
};

/// Random-walk scale on the log scale, adapted in batches during burn-in and then frozen.
class AdaptiveScale {
public:
    explicit AdaptiveScale(double initial = 0.5, double target = 0.3)
        : log_scale_(std::log(initial)), target_(target) {}

    double scale() const { return std::exp(log_scale_); }

    void record(bool accepted, bool burning) {
        if (burning) {
            batch_prop_++;
            batch_acc_ += accepted;
            if (batch_prop_ == 50) {
                const double rate = double(batch_acc_) / double(batch_prop_);
                log_scale_ += std::clamp(rate - target_, -0.5, 0.5) / std::sqrt(1.0 + double(++batches_) / 10.0);
                batch_prop_ = batch_acc_ = 0;
            }
        } else {
            prop_++;
            acc_ += accepted;
        }
    }

    /// Acceptance rate after burn-in; NaN if nothing was proposed.
    double acceptance() const { return prop_ ? double(acc_) / double(prop_) : std::nan(""); }

private:
    double log_scale_;
    double target_;
    long batch_prop_ = 0, batch_acc_ = 0, batches_ = 0;
    long prop_ = 0, acc_ = 0;
};

inline bool accept(Rng& rng, double log_ratio) {
    return log_ratio >= 0.0 || std::log(rnd::uniform(rng)) < log_ratio;
}

/// Runs body(c) for c in [0, n) on up to `threads` workers; rethrows the first failure.
template <class F>
void parallel_for(int n, int threads, F&& body) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int c = 0; c < n; ++c) body(c);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (int c = w; c < n; c += threads) {
                try {
                    body(c);
                } catch (...) {
                    errors[std::size_t(c)] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace catbond::mcmc
