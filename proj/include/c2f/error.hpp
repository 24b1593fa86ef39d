// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef C2F_ERROR_HPP_
#define C2F_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace c2f {

// Failure categories. The numeric values are the CLI exit codes.
enum class ErrorKind : int {
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kIo = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& what) {
  return Error(ErrorKind::kConfig, what);
}
inline Error data_error(const std::string& what) {
  return Error(ErrorKind::kData, what);
}
inline Error numeric_error(const std::string& what) {
  return Error(ErrorKind::kNumeric, what);
}
inline Error io_error(const std::string& what) {
  return Error(ErrorKind::kIo, what);
}

}  // namespace c2f

#endif  // C2F_ERROR_HPP_
