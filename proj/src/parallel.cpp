#include "hbrnorm/parallel.hpp"

#include <cstdlib>
#include <string>

namespace hbrnorm {

std::size_t default_jobs() {
  if (const char* env = std::getenv("HBRNORM_JOBS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace hbrnorm
