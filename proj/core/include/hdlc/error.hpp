#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace hdlc {

// Base class for every failure raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input text: ISA files, network specs, recipes, manifests.
struct ParseError : Error {
  using Error::Error;
};

// The ISA relation, viewed child->parent, contains a cycle.
struct CycleError : Error {
  using Error::Error;
};

// Tensor or layer geometry mismatch.
struct ShapeError : Error {
  using Error::Error;
};

// File system and container format failures.
struct IoError : Error {
  using Error::Error;
};

// Out-of-range or inconsistent configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// printf-style formatting into a std::string.
inline std::string strf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out;
  if (n > 0) {
    out.resize(static_cast<size_t>(n));
    std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  }
  va_end(args);
  return out;
}

}  // namespace hdlc
