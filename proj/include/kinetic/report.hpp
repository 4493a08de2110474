#pragma once
// Structured text reports (key = value lines and tables), verdicts, and
// comma-separated plot data. Numbers print in shortest round-trip form.

#include <string>
#include <vector>

namespace kinetic {

enum class Verdict { pass, fail, inconclusive };

std::string verdict_name(Verdict v);

/// lhs <= rhs with the margin judged against ci: PASS when lhs + ci <= rhs,
/// FAIL when lhs - ci > rhs, otherwise INCONCLUSIVE.
Verdict compare_le(double lhs, double rhs, double ci);
/// Zero-tolerance version.
Verdict exact_le(double lhs, double rhs);
Verdict exact_lt(double lhs, double rhs);

struct VerdictRecord {
  std::string name;
  Verdict status = Verdict::pass;
  std::string detail;
};

/// Shortest representation that round-trips; "inf"/"nan" spelled out.
std::string num(double v);

class Report {
 public:
  void section(const std::string& title);
  void kv(const std::string& key, const std::string& value);
  void kv(const std::string& key, const char* value) { kv(key, std::string(value)); }
  void kv(const std::string& key, double value);
  void kv(const std::string& key, long long value);
  void kv(const std::string& key, int value) { kv(key, static_cast<long long>(value)); }
  void kv(const std::string& key, std::size_t value) { kv(key, static_cast<long long>(value)); }
  void kv(const std::string& key, bool value);
  void note(const std::string& text);
  void table(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows);
  void verdict(const std::string& name, Verdict status, const std::string& detail);
  void telemetry(const std::string& key, const std::string& value);

  const std::vector<VerdictRecord>& verdicts() const { return verdicts_; }
  /// 0 all PASS, 2 any FAIL, 3 INCONCLUSIVE without FAIL.
  int exit_code() const;
  const std::string& text() const { return body_; }
  std::string full_text() const;
  const std::string& telemetry_text() const { return telemetry_; }

 private:
  std::string body_;
  std::string telemetry_;
  std::vector<VerdictRecord> verdicts_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string text() const;
  void write(const std::string& path) const;
};

void write_text_file(const std::string& path, const std::string& text);

}  // namespace kinetic
