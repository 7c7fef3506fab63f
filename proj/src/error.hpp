#pragma once

#include <stdexcept>
#include <string>

namespace hctb {

enum class Status {
  ok = 0,
  invalid_argument = 1,
  io = 2,
  parse = 3,
  validation = 4,
  numeric = 5,
  internal = 6,
};

struct Error : std::runtime_error {
  Status status;
  Error(Status s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

[[noreturn]] inline void fail(Status s, const std::string& msg) { throw Error(s, msg); }

}  // namespace hctb
