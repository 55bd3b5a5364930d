#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace glad {

// All recoverable failures surface as glad::Error. Message text names the
// failing operation and the offending shapes/values where applicable.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_parts(std::ostringstream&) {}
template <class T, class... Rest>
void format_parts(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    format_parts(os, rest...);
}
}  // namespace detail

template <class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
    std::ostringstream os;
    detail::format_parts(os, parts...);
    throw Error(os.str());
}

template <class... Parts>
void require(bool cond, const Parts&... parts) {
    if (!cond) fail(parts...);
}

}  // namespace glad
