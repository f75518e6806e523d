#include "caos/errors.hpp"

namespace caos {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_input: return "invalid_input";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::degenerate_vector: return "degenerate_vector";
    case Errc::out_of_vocabulary: return "out_of_vocabulary";
    case Errc::empty_pool: return "empty_pool";
    case Errc::parse: return "parse";
    case Errc::config: return "config";
    case Errc::gateway: return "gateway";
    case Errc::no_cooccurrence: return "no_cooccurrence";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

}  // namespace caos
