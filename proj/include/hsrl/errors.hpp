#pragma once

#include <stdexcept>
#include <string>

namespace hsrl {

// Every failure surfaced by the library derives from Error so that the CLI
// can report a single machine-parsable line: "<kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define HSRL_DEFINE_ERROR(Name, kind_str)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& message) : Error(kind_str, message) {} \
  };

HSRL_DEFINE_ERROR(DimensionError, "dimension_error")
HSRL_DEFINE_ERROR(NumericError, "numeric_error")
HSRL_DEFINE_ERROR(ConfigError, "config_error")
HSRL_DEFINE_ERROR(ParseError, "parse_error")
HSRL_DEFINE_ERROR(SchemaError, "schema_error")
HSRL_DEFINE_ERROR(IndexError, "index_error")
HSRL_DEFINE_ERROR(AlignmentError, "alignment_error")
HSRL_DEFINE_ERROR(IoError, "io_error")
HSRL_DEFINE_ERROR(InvariantError, "invariant_error")

#undef HSRL_DEFINE_ERROR

}  // namespace hsrl
