// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace trifield {

// Flat `key = value` text config with '#' comments. Keys keep insertion
// order when written back so snapshots diff cleanly.
class KvFile {
public:
    KvFile() = default;

    static KvFile parse_text(const std::string& text);
    static KvFile load(const std::string& path);
    void save(const std::string& path) const;
    std::string to_text() const;

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double value);
    void set(const std::string& key, int64_t value);

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& dflt) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double dflt) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t dflt) const;
    bool get_bool(const std::string& key, bool dflt) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

std::string format_double(double x);  // round-trip-exact, '.' decimal

}  // namespace trifield
