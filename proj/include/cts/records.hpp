#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cts {

// One calibration sample under one pairing: original logits plus the logits
// obtained after swapping in the partner's style and the partner's content.
struct LogitRecord {
  std::int64_t id = 0;
  int domain = 0;
  int label = 0;
  int pairing = 0;
  std::vector<double> logits;
  std::int64_t partner_id = 0;
  std::vector<double> style_shifted;
  std::vector<double> content_shifted;

  bool operator==(const LogitRecord&) const = default;
};

// Validated, immutable record collection. Construction checks that every
// vector has the same length K >= 2, values are finite, labels lie in
// [0, K), and that any partner present in the set shares the record's label.
// Floored log-probabilities of the (unscaled) shifted branches are cached.
class RecordSet {
 public:
  explicit RecordSet(std::vector<LogitRecord> records);

  std::size_t size() const { return records_.size(); }
  int classes() const { return classes_; }
  const std::vector<LogitRecord>& records() const { return records_; }
  const LogitRecord& operator[](std::size_t i) const { return records_[i]; }

  // Index of the partner's first record, if the partner is in the set.
  std::optional<std::size_t> partner(std::size_t i) const { return partner_[i]; }

  std::span<const double> log_q_style(std::size_t i) const { return log_q_style_[i]; }
  std::span<const double> log_q_content(std::size_t i) const { return log_q_content_[i]; }

  // Records satisfying `keep`.
  template <typename Pred>
  RecordSet filter(Pred keep) const {
    std::vector<LogitRecord> out;
    for (const auto& r : records_)
      if (keep(r)) out.push_back(r);
    return RecordSet(std::move(out));
  }

  // Records of pairing 0 only (one per sample).
  RecordSet originals() const;

 private:
  std::vector<LogitRecord> records_;
  int classes_ = 0;
  std::vector<std::optional<std::size_t>> partner_;
  std::vector<std::vector<double>> log_q_style_;
  std::vector<std::vector<double>> log_q_content_;
};

// JSON Lines cache: one record per line with the fields
// id, domain, label, pairing, logits, partner_id, style_shifted, content_shifted.
nlohmann::ordered_json to_json(const LogitRecord& r);

// Strict: rejects missing, extra or mistyped fields. Throws InputError.
LogitRecord record_from_json(const nlohmann::json& j);
LogitRecord parse_record_line(const std::string& line);

void write_cache(std::ostream& out, const std::vector<LogitRecord>& records);
void write_cache(const std::filesystem::path& path, const std::vector<LogitRecord>& records);

// Throws InputError naming the first offending line; also enforces a single K.
std::vector<LogitRecord> read_cache(std::istream& in);
std::vector<LogitRecord> read_cache(const std::filesystem::path& path);

}  // namespace cts
