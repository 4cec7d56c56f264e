#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stilt {

/// Shortest decimal form that parses back to the same 64-bit value.
inline std::string format_double(double v) {
    char buf[48];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Minimal CSV: fields must not contain commas or newlines (true of every
/// schema this project writes; record ids are validated on load).
inline std::string csv_join(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += fields[i];
    }
    return line;
}

inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw std::runtime_error("cannot open for write: " + path);
        out_ << csv_join(header) << "\n";
    }

    void row(const std::vector<std::string>& fields) { out_ << csv_join(fields) << "\n"; }

private:
    std::ofstream out_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::runtime_error("csv: missing column '" + name + "'");
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
    table.header = csv_split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = csv_split(line);
        if (fields.size() != table.header.size())
            throw std::runtime_error("csv: ragged row in " + path);
        table.rows.push_back(std::move(fields));
    }
    return table;
}

}  // namespace stilt
