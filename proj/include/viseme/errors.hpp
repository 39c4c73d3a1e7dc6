// Error taxonomy shared by all pipeline stages. Every failure surfaces as a
// typed exception so callers (and the CLI exit-code mapping) can tell
// validation problems from I/O problems.
#pragma once

#include <stdexcept>
#include <string>

namespace viseme {

enum class ErrKind {
  Parse,            // malformed input file (carries file/line context)
  Validation,       // invariant or precondition violated
  Integrity,        // file contents inconsistent with their own metadata
  Unsupported,      // recognized but unsupported format variant
  Config,           // bad configuration / domain error in parameters
  Io,               // filesystem failure
  MissingArtifact,  // a pipeline stage output that should exist does not
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

inline Error parse_error(const std::string& file, long line, const std::string& msg) {
  return Error(ErrKind::Parse, file + ":" + std::to_string(line) + ": " + msg);
}
inline Error validation_error(const std::string& msg) { return Error(ErrKind::Validation, msg); }
inline Error integrity_error(const std::string& msg) { return Error(ErrKind::Integrity, msg); }
inline Error unsupported_error(const std::string& msg) { return Error(ErrKind::Unsupported, msg); }
inline Error config_error(const std::string& msg) { return Error(ErrKind::Config, msg); }
inline Error io_error(const std::string& msg) { return Error(ErrKind::Io, msg); }
inline Error missing_artifact(const std::string& artifact, const std::string& stage) {
  return Error(ErrKind::MissingArtifact,
               "missing artifact '" + artifact + "'; run the `" + stage + "` stage first");
}

}  // namespace viseme
