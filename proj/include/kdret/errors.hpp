#pragma once

#include <stdexcept>
#include <string>

namespace kdret {

// Base for every error raised by the library. category() is a stable short
// name that the CLI prints and tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define KDRET_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

KDRET_DEFINE_ERROR(ShapeError);
KDRET_DEFINE_ERROR(WindowError);
KDRET_DEFINE_ERROR(NonScalarError);
KDRET_DEFINE_ERROR(TapeError);
KDRET_DEFINE_ERROR(NumericsError);
KDRET_DEFINE_ERROR(VocabError);
KDRET_DEFINE_ERROR(EmptyCorpusError);
KDRET_DEFINE_ERROR(InsufficientCorpusError);
KDRET_DEFINE_ERROR(SplitError);
KDRET_DEFINE_ERROR(LabelError);
KDRET_DEFINE_ERROR(CacheError);
KDRET_DEFINE_ERROR(AlignmentError);
KDRET_DEFINE_ERROR(EmptyError);
KDRET_DEFINE_ERROR(EmptyIndexError);
KDRET_DEFINE_ERROR(FormatError);
KDRET_DEFINE_ERROR(ConfigError);
KDRET_DEFINE_ERROR(DivergenceError);

#undef KDRET_DEFINE_ERROR

}  // namespace kdret
