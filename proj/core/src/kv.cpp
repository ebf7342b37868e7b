// Copyright (C) 2026 trifield authors
// SPDX-License-Identifier: Apache-2.0

#include "trifield/kv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "trifield/errors.hpp"

namespace trifield {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double x) {
    char buf[64];
    // shortest representation that round-trips
    snprintf(buf, sizeof(buf), "%.17g", x);
    double back = 0.0;
    for (int prec = 1; prec < 17; ++prec) {
        char t[64];
        snprintf(t, sizeof(t), "%.*g", prec, x);
        sscanf(t, "%lf", &back);
        if (back == x) return std::string(t);
    }
    return std::string(buf);
}

KvFile KvFile::parse_text(const std::string& text) {
    KvFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("kv parse error at line " + std::to_string(lineno) + ": missing '='");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty())
            throw ConfigError("kv parse error at line " + std::to_string(lineno) + ": empty key");
        kv.set(key, val);
    }
    return kv;
}

KvFile KvFile::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

void KvFile::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write config file: " + path);
    f << to_text();
    if (!f) throw IoError("write failed: " + path);
}

std::string KvFile::to_text() const {
    std::string out;
    for (const auto& k : order_) {
        out += k;
        out += " = ";
        out += values_.at(k);
        out += "\n";
    }
    return out;
}

void KvFile::set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
}

void KvFile::set(const std::string& key, double value) { set(key, format_double(value)); }
void KvFile::set(const std::string& key, int64_t value) { set(key, std::to_string(value)); }

std::string KvFile::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

std::string KvFile::get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
}

double KvFile::get_double(const std::string& key) const {
    std::string s = get_string(key);
    try {
        size_t pos = 0;
        double x = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: " + s);
    }
}

double KvFile::get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
}

int64_t KvFile::get_int(const std::string& key) const {
    std::string s = get_string(key);
    try {
        size_t pos = 0;
        long long x = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: " + s);
    }
}

int64_t KvFile::get_int(const std::string& key, int64_t dflt) const {
    return has(key) ? get_int(key) : dflt;
}

bool KvFile::get_bool(const std::string& key, bool dflt) const {
    if (!has(key)) return dflt;
    std::string s = get_string(key);
    std::transform(s.begin(), s.end(), s.begin(), ::tolower);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key '" + key + "' is not a bool: " + s);
}

}  // namespace trifield
