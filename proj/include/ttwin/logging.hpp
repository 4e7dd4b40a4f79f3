#pragma once

#include <iostream>
#include <mutex>
#include <string>

#include "json.hpp"

namespace ttwin {

// Line-delimited JSON logging to stderr.
inline void log_line(const char* level, const std::string& module, const std::string& message,
                     nlohmann::json fields = {}) {
    static std::mutex mu;
    nlohmann::json j;
    j["level"] = level;
    j["module"] = module;
    j["message"] = message;
    for (auto& [k, v] : fields.items()) j[k] = v;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << j.dump() << "\n";
}

inline void log_info(const std::string& module, const std::string& message,
                     nlohmann::json fields = {}) {
    log_line("info", module, message, std::move(fields));
}

inline void log_warn(const std::string& module, const std::string& message,
                     nlohmann::json fields = {}) {
    log_line("warn", module, message, std::move(fields));
}

inline void log_error(const std::string& module, const std::string& message,
                      nlohmann::json fields = {}) {
    log_line("error", module, message, std::move(fields));
}

}  // namespace ttwin
