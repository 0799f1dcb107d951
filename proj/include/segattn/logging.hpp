#pragma once

#include <sstream>
#include <string>

namespace segattn {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Active level comes from SEGATTN_LOG={error,info,debug}; default info.
LogLevel log_level();
void set_log_level(LogLevel level);
void log_line(LogLevel level, const std::string& message);

namespace detail {
struct LogStream {
  LogLevel level;
  std::ostringstream os;
  ~LogStream() { log_line(level, os.str()); }
};
}  // namespace detail

}  // namespace segattn

#define SEGATTN_LOG_ERROR ::segattn::detail::LogStream{::segattn::LogLevel::kError}.os
#define SEGATTN_LOG_INFO ::segattn::detail::LogStream{::segattn::LogLevel::kInfo}.os
#define SEGATTN_LOG_DEBUG ::segattn::detail::LogStream{::segattn::LogLevel::kDebug}.os
