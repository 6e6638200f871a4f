#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "error.hpp"

namespace robust_bandit::csv {

// Shortest decimal text that parses back to the same double.
inline std::string format(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw bandit_error("csv_parse", "not a number: '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw bandit_error("csv_parse", "not an integer: '" + std::string(s) + "'");
    return v;
}

// Fields are plain tokens: identifiers used in this project never contain
// commas, quotes or newlines.
inline bool is_plain_token(std::string_view s) {
    return s.find_first_of(",\"\n\r") == std::string_view::npos;
}

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    Writer& row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
        return *this;
    }

private:
    std::ostream& out_;
};

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// Reads a whole file; first row is the header and is checked against `header`.
inline std::vector<std::vector<std::string>> read_file(const std::string& path, const std::vector<std::string>& header) {
    std::ifstream in(path);
    if (!in) throw bandit_error("io_error", "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || split(line) != header)
        throw bandit_error("csv_header", "unexpected header in '" + path + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != header.size())
            throw bandit_error("csv_parse", "wrong field count in '" + path + "'");
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace robust_bandit::csv
