#pragma once

#include <doctest.h>

#include <functional>

#include "ddm/error.hpp"

namespace ddm::test {

// True when `fn` throws a ddm::Error of the given kind.
inline bool throws_kind(const std::function<void()>& fn, ErrorKind kind) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

}  // namespace ddm::test
