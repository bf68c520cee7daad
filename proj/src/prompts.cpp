#include "kp/prompts.hpp"

#include <cstdlib>
#include <filesystem>

#include "kp/digest.hpp"
#include "kp/errors.hpp"
#include "kp/text.hpp"

#ifndef KP_DEFAULT_PROMPT_DIR
#define KP_DEFAULT_PROMPT_DIR ""
#endif

namespace kp {

namespace fs = std::filesystem;

std::string render_template(const std::string& tmpl, const PromptVars& vars) {
  std::string out = tmpl;
  for (const auto& [key, value] : vars) {
    const std::string placeholder = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = out.find(placeholder, pos)) != std::string::npos) {
      out.replace(pos, placeholder.size(), value);
      pos += value.size();
    }
  }
  return out;
}

PromptLibrary::PromptLibrary(std::string asset_dir) : dir_(std::move(asset_dir)) {
  if (dir_.empty()) {
    if (const char* env = std::getenv("KP_PROMPT_DIR"); env != nullptr && *env != '\0') {
      dir_ = env;
    } else {
      dir_ = KP_DEFAULT_PROMPT_DIR;
    }
  }
  if (dir_.empty() || !fs::is_directory(dir_)) {
    throw ConfigError("prompt asset directory not found: '" + dir_ + "'");
  }
  for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::string rel = fs::relative(entry.path(), dir_).generic_string();
    rel = rel.substr(0, rel.size() - 4);  // drop .txt
    std::string body = read_file(entry.path().string());
    // Files carry one trailing newline from the asset layout; templates do not.
    if (!body.empty() && body.back() == '\n') body.pop_back();
    templates_[rel] = std::move(body);
  }
  if (templates_.empty()) {
    throw ConfigError("no prompt templates under: " + dir_);
  }
  std::string all;
  for (const auto& [name, body] : templates_) {
    all += name;
    all += '\0';
    all += body;
    all += '\0';
  }
  digest_ = sha256_hex(all);
}

const std::string& PromptLibrary::text(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown prompt template: " + name);
  return it->second;
}

std::string PromptLibrary::render(const std::string& name, const PromptVars& vars,
                                  const std::vector<std::string>& required) const {
  const std::string& tmpl = text(name);
  PromptVars effective;
  for (const auto& var : required) {
    auto it = vars.find(var);
    if (it == vars.end()) {
      throw ConfigError("template " + name + " missing variable: " + var);
    }
    if (tmpl.find("{" + var + "}") == std::string::npos) {
      throw ConfigError("template " + name + " has no placeholder for: " + var);
    }
    effective[var] = it->second;
  }
  return render_template(tmpl, effective);
}

}  // namespace kp
