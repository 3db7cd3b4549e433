#pragma once

#include <string>

namespace e2bki {

// Verbosity from E2BKI_LOG: 0 warnings (default), 1 info, 2 debug.
int log_level();

void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

} // namespace e2bki
