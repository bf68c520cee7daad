#pragma once

#include <map>
#include <string>
#include <vector>

namespace kp {

// Substitution map for {variable} placeholders.
using PromptVars = std::map<std::string, std::string>;

// Replaces every "{key}" occurrence for each provided key. Text outside the
// provided keys is left untouched, so literal braces in the templates (for
// example the {{name; TYPE}} entity format or the <answer_{i}> tag
// description) survive rendering byte-for-byte.
std::string render_template(const std::string& tmpl, const PromptVars& vars);

// Loads the bundled prompt templates from an asset directory. Rendering is a
// pure function of (template bytes, variables): identical inputs produce
// identical prompts, and the content digest makes template drift detectable
// in provenance records.
class PromptLibrary {
 public:
  // Empty dir resolves to $KP_PROMPT_DIR, then the compiled-in default.
  explicit PromptLibrary(std::string asset_dir = "");

  const std::string& asset_dir() const { return dir_; }

  // Raw template text by relative name, e.g. "pipeline/gen_direct" or
  // "instructions/mc_plain".
  const std::string& text(const std::string& name) const;

  // Renders a template; every variable named in `required` must be present
  // in vars and consumed by the template's placeholders.
  std::string render(const std::string& name, const PromptVars& vars,
                     const std::vector<std::string>& required) const;

  // SHA-256 over all template files (sorted by name).
  const std::string& digest() const { return digest_; }

 private:
  std::string dir_;
  std::map<std::string, std::string> templates_;
  std::string digest_;
};

}  // namespace kp
