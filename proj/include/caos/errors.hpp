#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace caos {

enum class Errc {
  invalid_input,
  dimension_mismatch,
  degenerate_vector,
  out_of_vocabulary,
  empty_pool,
  parse,
  config,
  gateway,
  no_cooccurrence,
  internal,
};

const char* errc_name(Errc code);

/// Single exception type for the whole library; the code tells callers
/// which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace caos
