#pragma once

#include <stdexcept>
#include <string>

namespace paudit {

// Domain errors. The CLI maps any Error to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PAUDIT_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

PAUDIT_DEFINE_ERROR(InvalidImage);
PAUDIT_DEFINE_ERROR(InvalidPromptSpec);
PAUDIT_DEFINE_ERROR(MissingGolden);
PAUDIT_DEFINE_ERROR(ConfigError);
PAUDIT_DEFINE_ERROR(FormatError);
PAUDIT_DEFINE_ERROR(UnknownImage);
PAUDIT_DEFINE_ERROR(MissingWeights);
PAUDIT_DEFINE_ERROR(InvalidInput);
PAUDIT_DEFINE_ERROR(EmptySubset);
PAUDIT_DEFINE_ERROR(AlignmentError);
PAUDIT_DEFINE_ERROR(TransportError);

#undef PAUDIT_DEFINE_ERROR

class CacheError : public Error {
 public:
  CacheError(std::string key, const std::string& what)
      : Error("cache entry " + key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace paudit
