#include "cir/rng.hpp"

#include <sstream>

#include "cir/common.hpp"

namespace cir {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  Rng r;
  std::istringstream is(text);
  is >> r.eng_;
  if (is.fail()) throw ParseError("Rng::deserialize: malformed engine state");
  return r;
}

}  // namespace cir
