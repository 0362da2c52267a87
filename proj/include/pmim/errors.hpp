#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace pmim {

// Error taxonomy mirrors the CLI exit codes: config/usage -> 2,
// data -> 3, numeric -> 4.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
template <class... Ts>
std::string format_msg(Ts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}
}  // namespace detail

}  // namespace pmim

#define PMIM_CHECK_CONFIG(cond, ...)                                      \
  do {                                                                    \
    if (!(cond)) throw ::pmim::config_error(                              \
        ::pmim::detail::format_msg(__VA_ARGS__));                         \
  } while (0)

#define PMIM_CHECK_DATA(cond, ...)                                        \
  do {                                                                    \
    if (!(cond)) throw ::pmim::data_error(                                \
        ::pmim::detail::format_msg(__VA_ARGS__));                         \
  } while (0)

#define PMIM_CHECK_NUMERIC(cond, ...)                                     \
  do {                                                                    \
    if (!(cond)) throw ::pmim::numeric_error(                             \
        ::pmim::detail::format_msg(__VA_ARGS__));                         \
  } while (0)

// Internal contract violations (shape mismatches between modules etc).
#define PMIM_CHECK(cond, ...)                                             \
  do {                                                                    \
    if (!(cond)) throw ::std::logic_error(                                \
        ::pmim::detail::format_msg("contract violation: ", __VA_ARGS__)); \
  } while (0)
