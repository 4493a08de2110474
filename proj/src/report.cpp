#include "kinetic/report.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace kinetic {

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::pass:
      return "PASS";
    case Verdict::fail:
      return "FAIL";
    default:
      return "INCONCLUSIVE";
  }
}

Verdict compare_le(double lhs, double rhs, double ci) {
  if (std::isnan(lhs) || std::isnan(rhs) || std::isnan(ci)) return Verdict::inconclusive;
  if (lhs + ci <= rhs) return Verdict::pass;
  if (lhs - ci > rhs) return Verdict::fail;
  return Verdict::inconclusive;
}

Verdict exact_le(double lhs, double rhs) { return lhs <= rhs ? Verdict::pass : Verdict::fail; }
Verdict exact_lt(double lhs, double rhs) { return lhs < rhs ? Verdict::pass : Verdict::fail; }

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

void Report::section(const std::string& title) { body_ += fmt::format("\n[{}]\n", title); }

void Report::kv(const std::string& key, const std::string& value) { body_ += fmt::format("{} = {}\n", key, value); }
void Report::kv(const std::string& key, double value) { kv(key, num(value)); }
void Report::kv(const std::string& key, long long value) { kv(key, fmt::format("{}", value)); }
void Report::kv(const std::string& key, bool value) { kv(key, std::string(value ? "true" : "false")); }

void Report::note(const std::string& text) { body_ += fmt::format("# {}\n", text); }

void Report::table(const std::string& name, const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  body_ += fmt::format("table {} ({} rows)\n", name, rows.size());
  body_ += fmt::format("  {}\n", fmt::join(header, " | "));
  for (const auto& r : rows) body_ += fmt::format("  {}\n", fmt::join(r, " | "));
}

void Report::verdict(const std::string& name, Verdict status, const std::string& detail) {
  verdicts_.push_back({name, status, detail});
}

void Report::telemetry(const std::string& key, const std::string& value) {
  telemetry_ += fmt::format("{} = {}\n", key, value);
}

int Report::exit_code() const {
  bool fail = false, inconclusive = false;
  for (const auto& v : verdicts_) {
    fail |= v.status == Verdict::fail;
    inconclusive |= v.status == Verdict::inconclusive;
  }
  return fail ? 2 : inconclusive ? 3 : 0;
}

std::string Report::full_text() const {
  std::string out = body_;
  out += "\n[verdicts]\n";
  for (const auto& v : verdicts_) out += fmt::format("{} = {} ; {}\n", v.name, verdict_name(v.status), v.detail);
  out += fmt::format("exit_code = {}\n", exit_code());
  return out;
}

std::string CsvTable::text() const {
  std::string out = fmt::format("{}\n", fmt::join(header, ","));
  for (const auto& r : rows) out += fmt::format("{}\n", fmt::join(r, ","));
  return out;
}

void CsvTable::write(const std::string& path) const { write_text_file(path, text()); }

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  out << text;
  if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", path));
}

}  // namespace kinetic
