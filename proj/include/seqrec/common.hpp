#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace seqrec {

inline constexpr const char* kVersion = "0.1.0";

#ifndef SEQREC_GIT_REVISION
#define SEQREC_GIT_REVISION "unknown"
#endif

// "0.1.0+<git short hash>", captured at configure time.
inline std::string code_version() {
    return std::string(kVersion) + "+" + SEQREC_GIT_REVISION;
}

// Toolkit-wide error type. `category` is a short machine-readable tag used by
// the CLI for its single-line error output.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

namespace detail {
template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}
}  // namespace detail

#define SEQREC_CHECK(cond, category, ...)                                   \
    do {                                                                    \
        if (!(cond)) {                                                      \
            throw ::seqrec::Error(category,                                 \
                                  ::seqrec::detail::concat(__VA_ARGS__));   \
        }                                                                   \
    } while (0)

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 has a pinned algorithm, but the
// <random> distributions do not, so normal draws and shuffles are hand-rolled
// to keep run manifests reproducible across standard libraries.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() {
        state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
        std::uint64_t x = state_;
        x = splitmix64(x);
        return x;
    }

    // uniform in [0, 1)
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; one draw per call, the spare is cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Worker-count resolution: explicit request wins, then the SEQREC_MAX_THREADS
// env var caps the hardware default.
inline int resolve_threads(int requested) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int n = requested > 0 ? requested : hw;
    if (const char* cap = std::getenv("SEQREC_MAX_THREADS")) {
        int c = std::atoi(cap);
        if (c > 0 && c < n) n = c;
    }
    return n;
}

}  // namespace seqrec
