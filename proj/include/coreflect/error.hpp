#pragma once

#include <stdexcept>
#include <string>

namespace coreflect {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kBackend = 3,
  kProtocol = 4,
};

/// Base of every error raised by the library. `kind()` is a stable name used
/// in logs and tests; `exit_code()` maps the error onto the CLI contract.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message, ExitCode code)
      : std::runtime_error(message), kind_(std::move(kind)), code_(code) {}

  const std::string& kind() const noexcept { return kind_; }
  ExitCode exit_code() const noexcept { return code_; }

 private:
  std::string kind_;
  ExitCode code_;
};

#define COREFLECT_DEFINE_ERROR(Name, Code)                        \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& message)                     \
        : Error(#Name, message, ExitCode::Code) {}                \
  };

/// Invalid input record. `field()` is the dotted path of the first offending
/// field, e.g. "preferred_style.clarity".
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& message)
      : Error("SchemaError", message, ExitCode::kConfig) {}
  SchemaError(std::string field, const std::string& reason)
      : Error("SchemaError", field + ": " + reason, ExitCode::kConfig),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

COREFLECT_DEFINE_ERROR(ConfigError, kConfig)

// Model gateway.
COREFLECT_DEFINE_ERROR(BackendError, kBackend)

// Protocol violations by a model reply.
COREFLECT_DEFINE_ERROR(MalformedVerdict, kProtocol)
COREFLECT_DEFINE_ERROR(TemplateParseError, kProtocol)
COREFLECT_DEFINE_ERROR(BoundViolation, kProtocol)
COREFLECT_DEFINE_ERROR(EmptyReply, kProtocol)
COREFLECT_DEFINE_ERROR(JudgeParseError, kProtocol)
COREFLECT_DEFINE_ERROR(RatingRangeError, kProtocol)
COREFLECT_DEFINE_ERROR(ParseError, kProtocol)

// Statistics and analysis preconditions.
COREFLECT_DEFINE_ERROR(InsufficientData, kFailure)
COREFLECT_DEFINE_ERROR(InsufficientModels, kFailure)
COREFLECT_DEFINE_ERROR(EmptyTensor, kFailure)
COREFLECT_DEFINE_ERROR(DegenerateInput, kFailure)
COREFLECT_DEFINE_ERROR(DegenerateAgreement, kFailure)

// Run directory / orchestration.
COREFLECT_DEFINE_ERROR(MissingMetrics, kFailure)
COREFLECT_DEFINE_ERROR(StageError, kFailure)

#undef COREFLECT_DEFINE_ERROR

}  // namespace coreflect
