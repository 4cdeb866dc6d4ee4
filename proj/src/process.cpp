#include "hybridvc/process.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "hybridvc/errors.hpp"

namespace hvc::process {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& prefix) {
  std::string pattern = (fs::temp_directory_path() / (prefix + "-XXXXXX")).string();
  std::vector<char> buf(pattern.begin(), pattern.end());
  buf.push_back('\0');
  if (::mkdtemp(buf.data()) == nullptr) {
    throw Error("mkdtemp failed for " + pattern);
  }
  path_ = buf.data();
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

bool is_executable(const fs::path& p) {
  std::error_code ec;
  return fs::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

std::vector<std::string> split_path_list(const char* env) {
  std::vector<std::string> out;
  if (env == nullptr) return out;
  std::stringstream ss(env);
  std::string item;
  while (std::getline(ss, item, ':')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

std::string first_token(const std::string& cmd) {
  const auto begin = cmd.find_first_not_of(" \t");
  if (begin == std::string::npos) return {};
  const auto end = cmd.find_first_of(" \t", begin);
  return cmd.substr(begin, end == std::string::npos ? std::string::npos
                                                    : end - begin);
}

}  // namespace

std::optional<fs::path> find_executable(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    return is_executable(name) ? std::optional<fs::path>(name) : std::nullopt;
  }
  std::vector<std::string> dirs = split_path_list(std::getenv("HYBRIDVC_TOOLDIR"));
  for (auto& d : split_path_list(std::getenv("PATH"))) dirs.push_back(d);
  for (const auto& d : dirs) {
    const fs::path candidate = fs::path(d) / name;
    if (is_executable(candidate)) return candidate;
  }
  return std::nullopt;
}

std::string expand_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string::npos) {
        const auto it = vars.find(tmpl.substr(i + 1, close - i - 1));
        if (it != vars.end()) {
          out += shell_quote(it->second);
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

void run_template(const std::string& tmpl,
                  const std::map<std::string, std::string>& vars,
                  const fs::path& scratch) {
  const std::string exe = first_token(tmpl);
  const auto resolved = find_executable(exe);
  if (!resolved) {
    throw CodecProcessError("executable not found: '" + exe + "'");
  }
  std::string cmd = expand_template(tmpl, vars);
  // Replace the leading token with the resolved path so $HYBRIDVC_TOOLDIR wins.
  const auto pos = cmd.find(exe);
  cmd.replace(pos, exe.size(), shell_quote(resolved->string()));
  const fs::path err_path = scratch / "stderr.txt";
  const std::string full = cmd + " </dev/null >/dev/null 2>" +
                           shell_quote(err_path.string());
  const int status = std::system(full.c_str());
  std::string err;
  {
    std::ifstream in(err_path);
    std::stringstream ss;
    ss << in.rdbuf();
    err = ss.str();
  }
  if (status == -1) throw CodecProcessError("could not spawn shell", err);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw CodecProcessError(
        "'" + exe + "' failed with status " +
            std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1),
        err);
  }
}

}  // namespace hvc::process
