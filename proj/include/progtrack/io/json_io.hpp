#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "progtrack/data/synth.hpp"
#include "progtrack/errors.hpp"
#include "progtrack/eval/bench.hpp"
#include "progtrack/model/tracker.hpp"
#include "progtrack/train/dt.hpp"

namespace progtrack::io {

using json = nlohmann::json;

std::size_t edit_distance(std::string_view a, std::string_view b);
// Closest known key within edit distance 3, or empty.
std::string suggest(std::string_view key, std::span<const std::string> known);

// Strict view of one JSON object. Every key queried through get()/child() is
// remembered; finish() rejects the rest with a "did you mean" hint.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path);

  template <class T>
  bool get(const std::string& key, T& out) {
    known_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    read(*it, out, at(key));
    return true;
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  // Marks `key` as known and returns the raw value (nullptr when absent).
  const json* raw(const std::string& key);
  ObjectReader child(const std::string& key);
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string& path() const { return path_; }
  void finish() const;

 private:
  static void read(const json& v, bool& out, const std::string& path);
  static void read(const json& v, int& out, const std::string& path);
  static void read(const json& v, std::uint64_t& out, const std::string& path);
  static void read(const json& v, double& out, const std::string& path);
  static void read(const json& v, std::string& out, const std::string& path);
  static void read(const json& v, std::vector<int>& out, const std::string& path);
  static void read(const json& v, std::vector<double>& out, const std::string& path);
  static void read(const json& v, std::vector<std::string>& out, const std::string& path);

  const json& j_;
  std::string path_;
  std::vector<std::string> known_;
};

json to_json(const model::TrackerConfig& c);
void read_into(ObjectReader r, model::TrackerConfig& c);

json to_json(const train::Schedule& s);
void read_into(ObjectReader r, train::Schedule& s);

json to_json(const train::DTConfig& c);
void read_into(ObjectReader r, train::DTConfig& c);

json to_json(const data::DatasetSpec& d);
void read_into(ObjectReader r, data::DatasetSpec& d);

json to_json(const eval::InferConfig& c);
void read_into(ObjectReader r, eval::InferConfig& c);

// Convenience: parse a whole value with the given path prefix.
template <class T>
T parse(const json& j, const std::string& path, T base = {}) {
  read_into(ObjectReader(j, path), base);
  return base;
}

json read_json_file(const std::string& path);
void write_json_file(const json& j, const std::string& path);

}  // namespace progtrack::io
