#include "cts/records.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "cts/errors.hpp"
#include "cts/numerics.hpp"

namespace cts {

using nlohmann::json;

namespace {

std::vector<double> floored_log_softmax(const std::vector<double>& logits) {
  auto q = softmax_t(logits, 1.0);
  std::vector<double> out(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) out[k] = std::log(std::max(q[k], kKlFloor));
  return out;
}

void check_vector(const std::vector<double>& v, std::size_t k, const char* what) {
  if (v.size() != k) throw InputError(std::string(what) + " has the wrong length");
  for (double x : v)
    if (!std::isfinite(x)) throw InputError(std::string(what) + " holds a non-finite value");
}

}  // namespace

RecordSet::RecordSet(std::vector<LogitRecord> records) : records_(std::move(records)) {
  if (records_.empty()) throw InputError("record set is empty");
  const std::size_t k = records_.front().logits.size();
  if (k < 2) throw InputError("records need K >= 2 logits");
  classes_ = static_cast<int>(k);

  std::map<std::int64_t, std::size_t> first;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    check_vector(r.logits, k, "logits");
    check_vector(r.style_shifted, k, "style_shifted");
    check_vector(r.content_shifted, k, "content_shifted");
    if (r.label < 0 || r.label >= classes_) throw InputError("label out of range");
    first.emplace(r.id, i);
  }
  partner_.resize(records_.size());
  log_q_style_.resize(records_.size());
  log_q_content_.resize(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (auto it = first.find(r.partner_id); it != first.end()) {
      if (records_[it->second].label != r.label)
        throw InputError("record " + std::to_string(r.id) + " is paired with a different class");
      partner_[i] = it->second;
    }
    log_q_style_[i] = floored_log_softmax(r.style_shifted);
    log_q_content_[i] = floored_log_softmax(r.content_shifted);
  }
}

RecordSet RecordSet::originals() const {
  return filter([](const LogitRecord& r) { return r.pairing == 0; });
}

nlohmann::ordered_json to_json(const LogitRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["domain"] = r.domain;
  j["label"] = r.label;
  j["pairing"] = r.pairing;
  j["logits"] = r.logits;
  j["partner_id"] = r.partner_id;
  j["style_shifted"] = r.style_shifted;
  j["content_shifted"] = r.content_shifted;
  return j;
}

LogitRecord record_from_json(const json& j) {
  static const std::set<std::string> kFields = {"id",         "domain",        "label",
                                                "pairing",    "logits",        "partner_id",
                                                "style_shifted", "content_shifted"};
  if (!j.is_object()) throw InputError("record is not a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kFields.count(key)) throw InputError("unknown field '" + key + "'");
  for (const auto& f : kFields)
    if (!j.contains(f)) throw InputError("missing field '" + f + "'");

  auto integer = [&](const char* name, bool non_negative) {
    const auto& v = j.at(name);
    if (!v.is_number_integer()) throw InputError(std::string("field '") + name + "' must be an integer");
    auto x = v.get<std::int64_t>();
    if (non_negative && x < 0) throw InputError(std::string("field '") + name + "' must be >= 0");
    return x;
  };
  auto vec = [&](const char* name) {
    const auto& v = j.at(name);
    if (!v.is_array() || v.size() < 2)
      throw InputError(std::string("field '") + name + "' must be an array of >= 2 numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number()) throw InputError(std::string("field '") + name + "' holds a non-number");
      out.push_back(x.get<double>());
    }
    return out;
  };

  LogitRecord r;
  r.id = integer("id", false);
  r.domain = static_cast<int>(integer("domain", true));
  r.label = static_cast<int>(integer("label", true));
  r.pairing = static_cast<int>(integer("pairing", true));
  r.partner_id = integer("partner_id", false);
  r.logits = vec("logits");
  r.style_shifted = vec("style_shifted");
  r.content_shifted = vec("content_shifted");
  if (r.style_shifted.size() != r.logits.size() || r.content_shifted.size() != r.logits.size())
    throw InputError("logit vectors differ in length");
  if (r.label >= static_cast<int>(r.logits.size())) throw InputError("label out of range");
  return r;
}

LogitRecord parse_record_line(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw InputError("line is not valid JSON");
  return record_from_json(j);
}

void write_cache(std::ostream& out, const std::vector<LogitRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void write_cache(const std::filesystem::path& path, const std::vector<LogitRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_cache(out, records);
}

std::vector<LogitRecord> read_cache(std::istream& in) {
  std::vector<LogitRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record_line(line));
      if (out.back().logits.size() != out.front().logits.size())
        throw InputError("class count differs from the first record");
    } catch (const InputError& e) {
      throw InputError("cache line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw InputError("cache holds no records");
  return out;
}

std::vector<LogitRecord> read_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_cache(in);
}

}  // namespace cts
