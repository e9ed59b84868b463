#pragma once

#include <stdexcept>
#include <string>

namespace ka {

// Every precondition / schema / I/O failure in the library surfaces as ka::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

}  // namespace ka
