#ifndef NVDB_ERRORS_HPP
#define NVDB_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace nvdb {

/// Invalid user input: a malformed configuration, an inconsistent spin system,
/// an impossible sweep path. `path()` names the offending config location when known.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what, std::string path = {})
      : std::invalid_argument(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// The integrator or the optimizer could not produce a trustworthy answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nvdb

#endif
