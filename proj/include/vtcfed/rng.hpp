#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace vtcfed {

// Deterministic random streams. mt19937_64 is bit-exact across platforms by
// the standard; the distribution transforms below are written out explicitly
// because the std:: distribution algorithms are implementation-defined and
// would break cross-toolchain reproducibility of manifests and metrics.

// SplitMix64 finalizer, used to derive independent stream seeds from
// (master seed, tag, index) without correlated low bits.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ splitmix64(tag)) + index);
}

// Stable tags for the subsystem streams (values are arbitrary but frozen).
namespace stream_tag {
constexpr std::uint64_t kPartition = 0x7061727469ULL;
constexpr std::uint64_t kDataset = 0x64617461ULL;
constexpr std::uint64_t kModelInit = 0x6d6f64656cULL;
constexpr std::uint64_t kDecoderInit = 0x6465636fULL;
constexpr std::uint64_t kSelection = 0x73656c65ULL;
constexpr std::uint64_t kClientRound = 0x726f756e64ULL;
constexpr std::uint64_t kGenerate = 0x67656e65ULL;
constexpr std::uint64_t kFineTune = 0x66696e65ULL;
}  // namespace stream_tag

class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1). 53-bit mantissa resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller (pairs cached).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Gamma(shape, 1) via Marsaglia-Tsang, with the u^(1/a) boost for a < 1.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = gaussian();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Dirichlet(alpha) over k components.
    std::vector<double> dirichlet(double alpha, int k) {
        std::vector<double> w(static_cast<size_t>(k));
        double sum = 0.0;
        for (auto& v : w) {
            v = gamma(alpha);
            sum += v;
        }
        if (sum <= 0.0) {  // pathological underflow for tiny alpha: fall back to one-hot
            w.assign(w.size(), 0.0);
            w[below(w.size())] = 1.0;
            return w;
        }
        for (auto& v : w) v /= sum;
        return w;
    }

    // Fisher-Yates shuffle (explicit, not std::shuffle, for stable output).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n), ascending order (selection sampling).
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> out;
        out.reserve(static_cast<size_t>(k));
        int remaining = n, needed = k;
        for (int i = 0; i < n && needed > 0; ++i) {
            if (below(static_cast<std::uint64_t>(remaining)) < static_cast<std::uint64_t>(needed)) {
                out.push_back(i);
                --needed;
            }
            --remaining;
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace vtcfed
