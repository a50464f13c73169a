#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fprog {

// Round half away from zero (symmetric commercial rounding).
std::int64_t round_half_away(double x);

// 1234567 -> "1,234,567". Negative values keep their sign.
std::string with_commas(std::int64_t v);

// Fixed-point decimal string, e.g. fixed(4.196, 2) == "4.20".
std::string fixed(double v, int digits);

// |a - b| <= atol + rtol * |b|
bool close(double a, double b, double rtol, double atol = 0.0);

// Deterministic stream of doubles / integers derived from a seed.  All
// stochastic behaviour in the project (init, dropout, synthetic data) goes
// through this so runs are reproducible across platforms.
class RandomSource {
  public:
    explicit RandomSource(std::uint64_t seed) : eng_(seed) {}

    // Uniform in [0, 1).  Uses the top 53 bits so the mapping is exact.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }
    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t bits() { return eng_(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return eng_() % n; }

  private:
    std::mt19937_64 eng_;
};

// Plain-text table with right-aligned numeric columns.
class TextTable {
  public:
    explicit TextTable(std::vector<std::string> header);
    void add_row(std::vector<std::string> cells);
    std::string str() const;
    // Comma-separated form of the same content (no padding, header first).
    std::string csv() const;

  private:
    std::vector<std::vector<std::string>> rows_;
};

// SHA-256 of a file's contents as a lowercase hex string.  Throws
// ValidationError when the file cannot be read.
std::string sha256_file(const std::string& path);
// SHA-256 of a byte string.
std::string sha256_bytes(const std::string& bytes);

// Log levels selected through the FPROG_LOG environment variable
// (error, warn, info, debug).  Messages go to stderr.
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };
bool log_enabled(LogLevel level);
void log_line(LogLevel level, const std::string& msg);

} // namespace fprog
