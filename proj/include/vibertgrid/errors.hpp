// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vbg {

/// Base of every error raised by the library. `category()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { kUsage, kData, kNumeric };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

#define VBG_DEFINE_ERROR(Name, Cat)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(Category::Cat, what) {} \
  };

VBG_DEFINE_ERROR(UsageError, kUsage)
VBG_DEFINE_ERROR(ConfigError, kUsage)
VBG_DEFINE_ERROR(ParseError, kData)
VBG_DEFINE_ERROR(ValidationError, kData)
VBG_DEFINE_ERROR(SchemaError, kData)
VBG_DEFINE_ERROR(TokenizationError, kData)
VBG_DEFINE_ERROR(AlignmentError, kData)
VBG_DEFINE_ERROR(ShapeError, kData)
VBG_DEFINE_ERROR(VocabError, kData)
VBG_DEFINE_ERROR(VersionError, kData)
VBG_DEFINE_ERROR(IoError, kData)
VBG_DEFINE_ERROR(NumericError, kNumeric)

#undef VBG_DEFINE_ERROR

using WarningHandler = std::function<void(std::string_view)>;

/// Installs a process-wide sink for non-fatal diagnostics and returns the previous one.
/// The default sink writes to stderr.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(std::string_view message);

/// RAII capture of warnings, mostly for tests.
class ScopedWarningCapture {
 public:
  ScopedWarningCapture();
  ~ScopedWarningCapture();
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(std::string_view needle) const;

 private:
  WarningHandler previous_;
  std::vector<std::string> messages_;
};

}  // namespace vbg
