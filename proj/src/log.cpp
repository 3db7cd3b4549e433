#include "e2bki/log.hpp"

#include <cstdlib>
#include <iostream>

namespace e2bki {

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("E2BKI_LOG");
        if (!env) return 0;
        const int v = std::atoi(env);
        return v < 0 ? 0 : v;
    }();
    return level;
}

void log_warn(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[debug] " << msg << "\n";
}

} // namespace e2bki
