#include "fprog/util.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fprog/errors.hpp"

namespace fprog {

std::int64_t round_half_away(double x) {
    return std::llround(x); // llround rounds halfway cases away from zero
}

std::string with_commas(std::int64_t v) {
    const bool neg = v < 0;
    std::string digits = std::to_string(neg ? -v : v);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count && count % 3 == 0) out.push_back(',');
        out.push_back(*it);
        ++count;
    }
    if (neg) out.push_back('-');
    return std::string(out.rbegin(), out.rend());
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

bool close(double a, double b, double rtol, double atol) {
    return std::abs(a - b) <= atol + rtol * std::abs(b);
}

TextTable::TextTable(std::vector<std::string> header) {
    rows_.push_back(std::move(header));
}

void TextTable::add_row(std::vector<std::string> cells) {
    rows_.push_back(std::move(cells));
}

std::string TextTable::str() const {
    std::vector<size_t> width(rows_.front().size(), 0);
    for (const auto& row : rows_)
        for (size_t i = 0; i < row.size() && i < width.size(); ++i)
            width[i] = std::max(width[i], row[i].size());

    std::ostringstream os;
    for (size_t r = 0; r < rows_.size(); ++r) {
        const auto& row = rows_[r];
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) os << "  ";
            // First column left-aligned (names), the rest right-aligned.
            if (i == 0)
                os << row[i] << std::string(width[i] - row[i].size(), ' ');
            else
                os << std::string(width[i] - row[i].size(), ' ') << row[i];
        }
        os << '\n';
        if (r == 0) {
            size_t total = 0;
            for (size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
            os << std::string(total, '-') << '\n';
        }
    }
    return os.str();
}

std::string TextTable::csv() const {
    std::ostringstream os;
    for (const auto& row : rows_) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) os << ',';
            // Cells never contain commas or quotes (numbers and plain names),
            // so no escaping is required.
            os << row[i];
        }
        os << '\n';
    }
    return os.str();
}

static std::string sha256_digest(const unsigned char* data, size_t len) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    if (!EVP_Digest(data, len, md, &md_len, EVP_sha256(), nullptr))
        throw std::runtime_error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned int i = 0; i < md_len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string sha256_bytes(const std::string& bytes) {
    return sha256_digest(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file for digest: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_bytes(buf.str());
}

static LogLevel configured_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("FPROG_LOG");
        if (!env) return LogLevel::Warn;
        std::string s(env);
        if (s == "error") return LogLevel::Error;
        if (s == "warn") return LogLevel::Warn;
        if (s == "info") return LogLevel::Info;
        if (s == "debug") return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

bool log_enabled(LogLevel level) {
    return static_cast<int>(level) <= static_cast<int>(configured_level());
}

void log_line(LogLevel level, const std::string& msg) {
    if (!log_enabled(level)) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

} // namespace fprog
