#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace segattn {

// Thrown on contract violations (bad shapes, invalid config values, ...).
class CheckError : public std::runtime_error {
public:
  explicit CheckError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown on I/O and file-format failures.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline std::string check_message(const char* expr, const char* file, int line,
                                 const std::string& msg) {
  std::ostringstream os;
  os << "check failed: " << expr << " (" << file << ":" << line << ")";
  if (!msg.empty()) os << ": " << msg;
  return os.str();
}
}  // namespace detail

}  // namespace segattn

#define SEGATTN_CHECK(cond, msg)                                          \
  do {                                                                    \
    if (!(cond)) {                                                        \
      std::ostringstream os_;                                             \
      os_ << msg;                                                         \
      throw ::segattn::CheckError(::segattn::detail::check_message(       \
          #cond, __FILE__, __LINE__, os_.str()));                         \
    }                                                                     \
  } while (0)
