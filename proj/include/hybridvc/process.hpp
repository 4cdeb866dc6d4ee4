#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace hvc::process {

// Private scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "hybridvc");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

// Looks for an executable in $HYBRIDVC_TOOLDIR, then $PATH. Names containing
// a slash are checked as given.
std::optional<std::filesystem::path> find_executable(const std::string& name);

// Expands {key} placeholders. Values are shell-quoted; unknown keys are left
// untouched.
std::string expand_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& vars);

// Runs an expanded command template through /bin/sh. Throws
// CodecProcessError when the executable cannot be resolved or the process
// exits non-zero; the error carries the captured stderr.
void run_template(const std::string& tmpl,
                  const std::map<std::string, std::string>& vars,
                  const std::filesystem::path& scratch);

}  // namespace hvc::process
