#include "rccm/config.hpp"

#include <fstream>
#include <sstream>

namespace rccm::config {

namespace {

std::string strip(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

nlohmann::json parse_toml_value(const std::string& raw);

nlohmann::json parse_toml_scalar(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  // integer or float
  try {
    size_t pos = 0;
    if (v.find_first_of(".eE") == std::string::npos) {
      const long long i = std::stoll(v, &pos);
      if (pos == v.size()) return i;
    }
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("TOML: cannot parse value '" + v + "'");
}

nlohmann::json parse_toml_value(const std::string& raw) {
  const std::string v = strip(raw);
  if (v.empty()) throw std::invalid_argument("TOML: empty value");
  if (v.front() == '[') {
    if (v.back() != ']') throw std::invalid_argument("TOML: unterminated array");
    nlohmann::json arr = nlohmann::json::array();
    std::string inner = v.substr(1, v.size() - 2);
    std::string item;
    int depth = 0;
    bool in_str = false;
    for (char c : inner) {
      if (c == '"') in_str = !in_str;
      if (!in_str) {
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
          if (!strip(item).empty()) arr.push_back(parse_toml_value(item));
          item.clear();
          continue;
        }
      }
      item += c;
    }
    if (!strip(item).empty()) arr.push_back(parse_toml_value(item));
    return arr;
  }
  return parse_toml_scalar(v);
}

// strips a trailing comment that is not inside a string
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

}  // namespace

nlohmann::json toml_to_json(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("TOML line " + std::to_string(lineno) + ": bad table header");
      }
      const std::string path = strip(line.substr(1, line.size() - 2));
      table = &root;
      size_t start = 0;
      while (start <= path.size()) {
        const size_t dot = path.find('.', start);
        const std::string key = strip(path.substr(start, dot == std::string::npos ? dot : dot - start));
        if (key.empty()) {
          throw std::invalid_argument("TOML line " + std::to_string(lineno) + ": empty table key");
        }
        table = &(*table)[key];
        if (table->is_null()) *table = nlohmann::json::object();
        if (dot == std::string::npos) break;
        start = dot + 1;
      }
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("TOML line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = strip(line.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument("TOML line " + std::to_string(lineno) + ": empty key");
    }
    (*table)[key] = parse_toml_value(line.substr(eq + 1));
  }
  return root;
}

training::TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();

  const std::string ext = path.extension().string();
  nlohmann::json j;
  if (ext == ".json") {
    j = nlohmann::json::parse(text);
  } else if (ext == ".toml") {
    j = toml_to_json(text);
  } else {
    // sniff: JSON configs start with '{'
    const std::string t = strip(text.substr(0, text.find('\n')));
    if (!t.empty() && t.front() == '{') {
      j = nlohmann::json::parse(text);
    } else {
      j = toml_to_json(text);
    }
  }
  return training::train_config_from_json(j);
}

}  // namespace rccm::config
