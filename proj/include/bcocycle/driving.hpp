#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

#include "blaschke.hpp"
#include "errors.hpp"

namespace bcocycle {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform in [0,1) as a pure function of (seed, stream, position).
inline double counter_uniform(std::uint64_t seed, std::int64_t i, std::uint64_t stream = 0) {
    std::uint64_t h = splitmix64(seed ^ splitmix64(std::uint64_t(i) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
    return double(h >> 11) * 0x1.0p-53;
}

struct BernoulliLaw {
    std::vector<double> weights;
};

struct MarkovLaw {
    std::vector<std::vector<double>> P;
};

// Two-sided symbol sequence; symbol_at(i) depends only on (seed, i) for
// Bernoulli laws and on (seed, positions since the anchor) for Markov laws.
class SymbolProcess {
public:
    static constexpr std::int64_t kMarkovAnchor = -(std::int64_t(1) << 30);
    static constexpr std::int64_t kBlock = std::int64_t(1) << 16;

    SymbolProcess(BernoulliLaw law, std::uint64_t seed) : seed_(seed), weights_(std::move(law.weights)) {
        validate_weights(weights_, "bernoulli");
        cumulative_ = cumulate(weights_);
    }

    SymbolProcess(MarkovLaw law, std::uint64_t seed) : seed_(seed), P_(std::move(law.P)) {
        const std::size_t k = P_.size();
        if (k == 0) throw ConfigError("markov.P: empty matrix");
        for (std::size_t r = 0; r < k; ++r) {
            if (P_[r].size() != k) throw ConfigError("markov.P: matrix must be square");
            validate_weights(P_[r], "markov.P[" + std::to_string(r) + "]");
            row_cumulative_.push_back(cumulate(P_[r]));
        }
        weights_ = stationary(P_);
        cumulative_ = cumulate(weights_);
        cache_ = shared_cache(seed_, P_);
    }

    std::uint64_t seed() const { return seed_; }
    int alphabet_size() const { return int(weights_.size()); }
    bool is_markov() const { return !P_.empty(); }
    // Stationary marginal (the Bernoulli weights themselves for i.i.d. laws).
    const std::vector<double>& marginal() const { return weights_; }
    const std::vector<std::vector<double>>& transition() const { return P_; }

    SymbolProcess with_seed(std::uint64_t s) const {
        SymbolProcess c = *this;
        c.seed_ = s;
        if (c.cache_) c.cache_ = shared_cache(s, c.P_);
        return c;
    }

    int symbol_at(std::int64_t i) const {
        if (P_.empty()) return pick(cumulative_, counter_uniform(seed_, i));
        return markov_symbol(i);
    }

private:
    struct MarkovCache {
        std::mutex mu;
        std::map<std::int64_t, int> block_start_state;          // block index -> state at block start
        std::unordered_map<std::int64_t, std::vector<std::uint8_t>> blocks;
    };

    // Processes with equal (seed, P) share one cache, so the walk from the anchor runs once.
    // The 16 most recently created caches stay alive between processes.
    static std::shared_ptr<MarkovCache> shared_cache(std::uint64_t seed, const std::vector<std::vector<double>>& P) {
        using Key = std::pair<std::uint64_t, std::vector<std::vector<double>>>;
        static std::mutex mu;
        static std::map<Key, std::shared_ptr<MarkovCache>> reg;
        static std::vector<Key> order;
        std::lock_guard<std::mutex> lk(mu);
        Key key{seed, P};
        if (auto it = reg.find(key); it != reg.end()) return it->second;
        auto c = std::make_shared<MarkovCache>();
        reg.emplace(key, c);
        order.push_back(key);
        if (order.size() > 16) {
            reg.erase(order.front());
            order.erase(order.begin());
        }
        return c;
    }

    static void validate_weights(const std::vector<double>& w, const std::string& what) {
        if (w.empty()) throw ConfigError(what + ": empty weight list");
        double s = 0.0;
        for (double x : w) {
            if (!(x >= 0.0)) throw ConfigError(what + ": negative weight");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError(what + ": weights must sum to 1");
    }

    static std::vector<double> cumulate(const std::vector<double>& w) {
        std::vector<double> c(w.size());
        std::partial_sum(w.begin(), w.end(), c.begin());
        c.back() = 1.0;
        return c;
    }

    static int pick(const std::vector<double>& cum, double u) {
        for (std::size_t s = 0; s < cum.size(); ++s)
            if (u < cum[s]) return int(s);
        return int(cum.size() - 1);
    }

    static std::vector<double> stationary(const std::vector<std::vector<double>>& P) {
        const std::size_t k = P.size();
        std::vector<double> v(k, 1.0 / double(k)), w(k);
        for (int it = 0; it < 100000; ++it) {
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b) w[b] += v[a] * P[a][b];
            double diff = 0.0;
            for (std::size_t a = 0; a < k; ++a) diff += std::abs(w[a] - v[a]);
            v = w;
            if (diff < 1e-15) break;
        }
        double s = std::accumulate(v.begin(), v.end(), 0.0);
        for (double& x : v) x /= s;
        return v;
    }

    int markov_symbol(std::int64_t i) const {
        if (i < kMarkovAnchor) throw DomainError("markov position precedes the anchor");
        const std::int64_t off = i - kMarkovAnchor;
        const std::int64_t b = off / kBlock;
        std::lock_guard<std::mutex> lk(cache_->mu);
        auto it = cache_->blocks.find(b);
        if (it == cache_->blocks.end()) {
            // Latest known block start at or before b.
            auto st = cache_->block_start_state.upper_bound(b);
            std::int64_t cur_b;
            int state;
            if (st == cache_->block_start_state.begin()) {
                cur_b = 0;
                state = pick(cumulative_, counter_uniform(seed_, kMarkovAnchor, 1));
                cache_->block_start_state[0] = state;
            } else {
                --st;
                cur_b = st->first;
                state = st->second;
            }
            for (; cur_b < b; ++cur_b) {
                state = walk(state, cur_b, nullptr);
                cache_->block_start_state[cur_b + 1] = state;
            }
            std::vector<std::uint8_t> blk(kBlock);
            walk(state, b, &blk);
            it = cache_->blocks.emplace(b, std::move(blk)).first;
            if (cache_->blocks.size() > 64) {
                auto victim = cache_->blocks.begin();
                if (victim->first == b) ++victim;
                cache_->blocks.erase(victim);
                it = cache_->blocks.find(b);
            }
        }
        return it->second[std::size_t(off - b * kBlock)];
    }

    // Runs block b from its start state; returns the start state of block b+1.
    int walk(int state, std::int64_t b, std::vector<std::uint8_t>* out) const {
        const std::int64_t base = kMarkovAnchor + b * kBlock;
        for (std::int64_t j = 0; j < kBlock; ++j) {
            if (j > 0 || b > 0) state = pick(row_cumulative_[state], counter_uniform(seed_, base + j));
            if (out) (*out)[std::size_t(j)] = std::uint8_t(state);
        }
        return state;
    }

    std::uint64_t seed_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
    std::vector<std::vector<double>> P_;
    std::vector<std::vector<double>> row_cumulative_;
    std::shared_ptr<MarkovCache> cache_;
};

// Maps addressed by symbol, optionally overridden by a position-dependent hook.
struct CocycleFamily {
    using MapHook = std::function<AnalyticMap(const SymbolProcess&, std::int64_t)>;
    using FixedPointHook = std::function<ExtComplex(const SymbolProcess&, std::int64_t)>;

    std::vector<AnalyticMap> maps;
    MapHook derived;
    // Present for derived cocycles whose random fixed point is known in closed form.
    FixedPointHook fixed_point;
    // r_T(R) bound of the derived maps, when it is known.
    std::optional<double> r_bound;

    bool is_derived() const { return bool(derived); }
};

inline CocycleFamily plain_family(std::vector<AnalyticMap> maps) {
    CocycleFamily f;
    f.maps = std::move(maps);
    return f;
}

inline AnalyticMap map_at(const CocycleFamily& fam, const SymbolProcess& proc, std::int64_t i) {
    if (fam.derived) return fam.derived(proc, i);
    const int s = proc.symbol_at(i);
    if (s < 0 || std::size_t(s) >= fam.maps.size()) throw DomainError("symbol outside the family alphabet");
    return fam.maps[std::size_t(s)];
}

}  // namespace bcocycle
