#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace scd {

enum class Errc {
  invalid_argument,
  invariant_violation,
  io_error,
  bad_magic,
  unsupported_version,
  truncated_payload,
  metadata_mismatch,
  malformed_metadata,
  empty_slice,
  zero_norm,
  non_positive_similarity,
  length_mismatch,
  zero_variance,
  not_converged,
  too_many_rows,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::invariant_violation: return "invariant violation";
    case Errc::io_error: return "i/o error";
    case Errc::bad_magic: return "bad magic";
    case Errc::unsupported_version: return "unsupported version";
    case Errc::truncated_payload: return "truncated payload";
    case Errc::metadata_mismatch: return "metadata mismatch";
    case Errc::malformed_metadata: return "malformed metadata";
    case Errc::empty_slice: return "empty slice";
    case Errc::zero_norm: return "zero norm";
    case Errc::non_positive_similarity: return "non-positive similarity";
    case Errc::length_mismatch: return "length mismatch";
    case Errc::zero_variance: return "zero variance";
    case Errc::not_converged: return "not converged";
    case Errc::too_many_rows: return "too many rows";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Affinity propagation ran out of iterations; the exemplar set of the last
/// iteration is kept so callers can inspect or retry with more budget.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<std::size_t> partial)
      : Error(Errc::not_converged, what), partial_exemplars_(std::move(partial)) {}

  const std::vector<std::size_t>& partial_exemplars() const noexcept { return partial_exemplars_; }

 private:
  std::vector<std::size_t> partial_exemplars_;
};

namespace detail {
inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}
}  // namespace detail

}  // namespace scd
