#pragma once

#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace kp {

using Json = nlohmann::json;

std::vector<Json> read_jsonl(const std::string& path);

// Invokes fn per line; tolerates a missing file when must_exist is false.
void for_each_jsonl(const std::string& path, const std::function<void(const Json&)>& fn,
                    bool must_exist = true);

// Append-only JSONL sink. Appends are serialized and flushed per record so
// an interrupted run leaves a valid prefix behind.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::string path);
  ~JsonlWriter();

  JsonlWriter(const JsonlWriter&) = delete;
  JsonlWriter& operator=(const JsonlWriter&) = delete;

  void append(const Json& record);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::mutex mu_;
  FILE* file_ = nullptr;
};

}  // namespace kp
