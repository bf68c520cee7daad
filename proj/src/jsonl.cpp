#include "kp/jsonl.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kp/errors.hpp"

namespace kp {

std::vector<Json> read_jsonl(const std::string& path) {
  std::vector<Json> records;
  for_each_jsonl(path, [&](const Json& j) { records.push_back(j); });
  return records;
}

void for_each_jsonl(const std::string& path, const std::function<void(const Json&)>& fn,
                    bool must_exist) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (must_exist) throw ConfigError("cannot open jsonl file: " + path);
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw IntegrityError("invalid json at " + path + ":" + std::to_string(line_no));
    }
    fn(j);
  }
}

JsonlWriter::JsonlWriter(std::string path) : path_(std::move(path)) {
  auto parent = std::filesystem::path(path_).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  file_ = std::fopen(path_.c_str(), "ab");
  if (!file_) throw ConfigError("cannot open for append: " + path_);
}

JsonlWriter::~JsonlWriter() {
  if (file_) std::fclose(file_);
}

void JsonlWriter::append(const Json& record) {
  std::string line = record.dump();
  line.push_back('\n');
  std::lock_guard<std::mutex> lock(mu_);
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0) {
    throw Error("append failed: " + path_);
  }
}

}  // namespace kp
