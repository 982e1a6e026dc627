#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ocvkit/errors.hpp"
#include "ocvkit/ocv_model.hpp"

namespace ocvkit {

enum class Mode : char {
  Discharge = 'D',
  Charge = 'C',
  Rest = 'R',
  Pulse = 'P',
};

inline char mode_char(Mode m) { return static_cast<char>(m); }

inline Mode mode_from_char(char c) {
  switch (c) {
    case 'D': return Mode::Discharge;
    case 'C': return Mode::Charge;
    case 'R': return Mode::Rest;
    case 'P': return Mode::Pulse;
    default: throw DataError(std::string("unknown mode character '") + c + "'");
  }
}

// One sample: voltage measured at t_s with current i_A flowing; i_A is the
// current applied over the interval from this record to the next one.
struct LogRecord {
  double t_s = 0.0;
  double i_A = 0.0;
  double v_V = 0.0;
  Mode mode = Mode::Rest;
};

struct TimeSeriesLog {
  std::string cell_id = "cell";
  std::vector<LogRecord> records;

  void validate() const {
    for (std::size_t k = 1; k < records.size(); ++k) {
      if (!(records[k].t_s > records[k - 1].t_s)) {
        throw DataError("log timestamps must strictly increase at row " + std::to_string(k));
      }
    }
  }
};

// Maximal run of consecutive records sharing one mode.
struct SegmentView {
  std::size_t first = 0;
  std::size_t count = 0;
  Mode mode = Mode::Rest;

  std::size_t end() const { return first + count; }
  std::size_t last() const { return first + count - 1; }
};

inline std::vector<SegmentView> segments(const TimeSeriesLog& log) {
  std::vector<SegmentView> out;
  const auto& r = log.records;
  std::size_t k = 0;
  while (k < r.size()) {
    std::size_t j = k + 1;
    while (j < r.size() && r[j].mode == r[k].mode) ++j;
    out.push_back({k, j - k, r[k].mode});
    k = j;
  }
  return out;
}

inline TimeSeriesLog slice(const TimeSeriesLog& log, std::size_t first, std::size_t count) {
  if (first + count > log.records.size()) throw DataError("log slice out of range");
  TimeSeriesLog out;
  out.cell_id = log.cell_id;
  out.records.assign(log.records.begin() + static_cast<std::ptrdiff_t>(first),
                     log.records.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

inline void write_log_csv(const TimeSeriesLog& log, std::ostream& os) {
  os << "# format=1\n";
  os << "# cell_id=" << log.cell_id << "\n";
  os << "t_s,i_A,v_V,mode\n";
  for (const auto& r : log.records) {
    os << format_double(r.t_s) << ',' << format_double(r.i_A) << ',' << format_double(r.v_V)
       << ',' << mode_char(r.mode) << '\n';
  }
}

inline TimeSeriesLog parse_log_csv(std::istream& is) {
  TimeSeriesLog log;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line.rfind("# format=1", 0) != 0) {
        throw DataError("log missing '# format=1' first line");
      }
      continue;
    }
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "# cell_id=";
      if (line.rfind(key, 0) == 0) log.cell_id = line.substr(key.size());
      continue;
    }
    if (!header_seen) {
      if (line != "t_s,i_A,v_V,mode") {
        throw DataError("log line " + std::to_string(line_no) +
                        ": expected header 't_s,i_A,v_V,mode'");
      }
      header_seen = true;
      continue;
    }
    LogRecord rec;
    std::size_t field = 0;
    std::size_t pos = 0;
    while (field < 4) {
      const std::size_t comma = line.find(',', pos);
      const bool last = field == 3;
      if (!last && comma == std::string::npos) {
        throw DataError("log line " + std::to_string(line_no) + ": expected 4 fields");
      }
      const std::string tok =
          line.substr(pos, (last ? line.size() : comma) - pos);
      if (field < 3) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
          throw DataError("log line " + std::to_string(line_no) + ": bad number '" + tok + "'");
        }
        if (field == 0) rec.t_s = v;
        if (field == 1) rec.i_A = v;
        if (field == 2) rec.v_V = v;
      } else {
        if (tok.size() != 1) {
          throw DataError("log line " + std::to_string(line_no) + ": bad mode '" + tok + "'");
        }
        rec.mode = mode_from_char(tok[0]);
      }
      pos = last ? line.size() : comma + 1;
      ++field;
    }
    log.records.push_back(rec);
  }
  if (!header_seen) throw DataError("log missing column header");
  log.validate();
  return log;
}

inline void write_log_file(const TimeSeriesLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_log_csv(log, os);
  if (!os.flush()) throw IoError("write failed for '" + path + "'");
}

inline TimeSeriesLog read_log_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return parse_log_csv(is);
}

}  // namespace ocvkit
