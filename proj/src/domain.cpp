#include "visitsim/domain.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace visitsim {

void validate_subject(const Subject& s) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("subject " + std::to_string(s.id) + ": " + what);
  };
  if (s.treatment != 0 && s.treatment != 1) fail("treatment must be 0 or 1");
  if (!(s.censoring_time > 0) || !std::isfinite(s.censoring_time))
    fail("censoring time must be positive and finite");
  if (s.visit_times.empty()) fail("no visits");
  if (s.visit_times.size() != s.outcomes.size())
    fail("outcomes and visit times differ in length");
  if (s.visit_times.front() != 0.0) fail("first visit must be at time 0");
  for (std::size_t j = 1; j < s.visit_times.size(); ++j) {
    if (!(s.visit_times[j] > s.visit_times[j - 1]))
      fail("visit times not strictly increasing at visit " + std::to_string(j));
  }
  if (!(s.visit_times.back() < s.censoring_time))
    fail("visit at or after censoring time");
  for (double y : s.outcomes) {
    if (!std::isfinite(y)) fail("non-finite outcome");
  }
}

std::size_t PanelDataset::n_rows() const {
  std::size_t n = 0;
  for (const auto& s : subjects_) n += s.n_visits();
  return n;
}

PanelDataset build_panel(std::vector<Subject> subjects,
                         std::string scenario_tag) {
  if (subjects.empty()) throw ValidationError("panel has no subjects");
  PanelDataset panel;
  std::size_t n_gaps = 0;
  for (const auto& s : subjects) {
    validate_subject(s);
    n_gaps += s.n_visits();
  }
  panel.gaps_.reserve(n_gaps);
  for (const auto& s : subjects) {
    const auto& t = s.visit_times;
    const std::vector<double> cov{static_cast<double>(s.treatment)};
    for (std::size_t j = 1; j <= t.size(); ++j) {
      GapRecord g;
      g.subject_id = s.id;
      g.index = static_cast<int>(j);
      g.observed = j < t.size();
      g.gap = (g.observed ? t[j] : s.censoring_time) - t[j - 1];
      g.covariates = cov;
      panel.gaps_.push_back(std::move(g));
    }
  }
  panel.subjects_ = std::move(subjects);
  panel.tag_ = std::move(scenario_tag);
  return panel;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_panel_csv(std::ostream& os, const PanelDataset& panel) {
  os << "subject_id,z,censoring_time,visit_time,y\n";
  for (const auto& s : panel.subjects()) {
    for (std::size_t j = 0; j < s.n_visits(); ++j) {
      os << s.id << ',' << s.treatment << ',' << format_double(s.censoring_time)
         << ',' << format_double(s.visit_times[j]) << ','
         << format_double(s.outcomes[j]) << '\n';
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line_no) {
  double v = 0;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ValidationError("line " + std::to_string(line_no) +
                          ": bad number '" + s + "'");
  return v;
}

}  // namespace

PanelDataset read_panel_csv(std::istream& is, std::string scenario_tag) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("empty panel file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,z,censoring_time,visit_time,y")
    throw ValidationError("unexpected panel header: " + line);

  std::vector<Subject> subjects;
  std::unordered_map<std::int64_t, std::size_t> pos;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 5)
      throw ValidationError("line " + std::to_string(line_no) +
                            ": expected 5 fields");
    const auto id = static_cast<std::int64_t>(parse_number(f[0], line_no));
    const int z = static_cast<int>(parse_number(f[1], line_no));
    const double c = parse_number(f[2], line_no);
    auto [it, inserted] = pos.try_emplace(id, subjects.size());
    if (inserted) {
      Subject s;
      s.id = id;
      s.treatment = z;
      s.censoring_time = c;
      subjects.push_back(std::move(s));
    }
    Subject& s = subjects[it->second];
    if (s.treatment != z || s.censoring_time != c)
      throw ValidationError("subject " + std::to_string(id) +
                            ": inconsistent subject-level fields");
    s.visit_times.push_back(parse_number(f[3], line_no));
    s.outcomes.push_back(parse_number(f[4], line_no));
  }
  return build_panel(std::move(subjects), std::move(scenario_tag));
}

char to_char(ModelLabel m) { return static_cast<char>('A' + static_cast<int>(m)); }

ModelLabel model_from_char(char c) {
  if (c < 'A' || c > 'E')
    throw ValidationError(std::string("unknown model '") + c + "'");
  return static_cast<ModelLabel>(c - 'A');
}

std::vector<ModelLabel> parse_model_list(const std::string& csv) {
  std::vector<ModelLabel> out;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.size() != 1) throw ValidationError("unknown model '" + tok + "'");
    const auto m = model_from_char(tok[0]);
    for (auto seen : out) {
      if (seen == m) throw ValidationError("model listed twice: " + tok);
    }
    out.push_back(m);
  }
  if (out.empty()) throw ValidationError("empty model list");
  return out;
}

std::size_t FitResult::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw std::out_of_range("no parameter named " + name);
}

namespace {
nlohmann::ordered_json number_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}
}  // namespace

std::string fit_result_to_json(const FitResult& fit) {
  nlohmann::ordered_json j;
  j["model"] = std::string(1, to_char(fit.model));
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    params[fit.names[i]] = {{"est", number_or_null(fit.estimates[i])},
                            {"se", number_or_null(fit.std_errors[i])}};
  }
  j["params"] = std::move(params);
  j["loglik"] = fit.loglik ? number_or_null(*fit.loglik) : nullptr;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  return j.dump(2);
}

FitResult fit_result_from_json(const std::string& text) {
  const auto j = nlohmann::ordered_json::parse(text);
  FitResult fit;
  const auto model = j.at("model").get<std::string>();
  if (model.size() != 1) throw ValidationError("bad model label " + model);
  fit.model = model_from_char(model[0]);
  auto get = [](const nlohmann::ordered_json& v) {
    return v.is_null() ? std::nan("") : v.get<double>();
  };
  for (const auto& [name, v] : j.at("params").items()) {
    fit.add(name, get(v.at("est")), get(v.at("se")));
  }
  if (!j.at("loglik").is_null()) fit.loglik = j.at("loglik").get<double>();
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  return fit;
}

}  // namespace visitsim
