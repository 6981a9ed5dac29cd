// Shared error type and small utilities used across all modules.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace datforge {

enum class ErrorKind {
  shape,     // tensor/box dimension mismatch
  argument,  // invalid argument value
  format,    // malformed file contents
  io,        // filesystem failure
  missing,   // required resource absent
  numeric,   // divergence / non-finite values
  config,    // bad run configuration
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {
inline void append_all(std::string&) {}
template <typename Head, typename... Tail>
void append_all(std::string& out, Head&& head, Tail&&... tail) {
  if constexpr (std::is_arithmetic_v<std::decay_t<Head>>) {
    out += std::to_string(head);
  } else {
    out += head;
  }
  append_all(out, std::forward<Tail>(tail)...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void raise(ErrorKind kind, Parts&&... parts) {
  std::string msg;
  detail::append_all(msg, std::forward<Parts>(parts)...);
  throw Error(kind, msg);
}

// FNV-1a, used for content hashes and run-directory ids.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t state = 0xcbf29ce484222325ull) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= 0x100000001b3ull;
  }
  return state;
}

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ull) {
  return fnv1a64(text.data(), text.size(), state);
}

}  // namespace datforge
