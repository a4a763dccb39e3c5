#include "qpsim/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace qpsim::exp {

std::size_t Rng::categorical(const std::vector<double>& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double u = uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u <= 0.0) return i;
  }
  return w.size() - 1;
}

numkit::Matrix random_hermitian(Eigen::Index n, Rng& rng, double scale) {
  numkit::Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = numkit::Complex(scale * rng.normal(), 0.0);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const numkit::Complex z(scale * rng.normal() * M_SQRT1_2,
                              scale * rng.normal() * M_SQRT1_2);
      m(i, j) = z;
      m(j, i) = std::conj(z);
    }
  }
  return m;
}

numkit::Matrix random_unitary(Eigen::Index n, Rng& rng) {
  return numkit::herm_exp(random_hermitian(n, rng), 1.0);
}

numkit::Vector random_state(Eigen::Index n, Rng& rng) {
  numkit::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = numkit::Complex(rng.normal(), rng.normal());
  v /= v.norm();
  return v;
}

numkit::DensityOperator random_density(Eigen::Index n, Eigen::Index rank, Rng& rng) {
  numkit::Matrix m = numkit::Matrix::Zero(n, n);
  double total = 0.0;
  std::vector<double> w(rank);
  for (auto& x : w) { x = rng.uniform(0.05, 1.0); total += x; }
  for (Eigen::Index k = 0; k < rank; ++k) {
    numkit::Vector v = random_state(n, rng);
    m += (w[k] / total) * (v * v.adjoint());
  }
  return numkit::make_density(m);
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    out[key] = val;
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config file: " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

void reject_unknown_keys(const KeyValues& kv, const std::vector<std::string>& allowed,
                         const std::string& context) {
  std::string offenders;
  for (const auto& [k, v] : kv) {
    bool ok = false;
    for (const auto& a : allowed) {
      if (k == a) { ok = true; break; }
    }
    if (!ok) offenders += (offenders.empty() ? "" : ", ") + k;
  }
  if (!offenders.empty()) {
    throw std::invalid_argument(context + ": unknown keys: " + offenders);
  }
}

double get_double(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument("missing config key: " + key);
  return std::stod(it->second);
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stod(it->second);
}

std::int64_t get_int(const KeyValues& kv, const std::string& key, std::int64_t fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stoll(it->second);
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

CsvWriter::CsvWriter(std::filesystem::path file, std::vector<std::string> columns,
                     std::uint64_t manifest_hash)
    : path_(std::move(file)), ncols_(columns.size()) {
  char head[64];
  std::snprintf(head, sizeof(head), "# manifest_hash=%016llx\n",
                static_cast<unsigned long long>(manifest_hash));
  buffer_ += head;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    buffer_ += columns[i];
    buffer_ += (i + 1 == columns.size()) ? '\n' : ',';
  }
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != ncols_) throw std::logic_error("CsvWriter: cell count mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    buffer_ += cells[i];
    buffer_ += (i + 1 == cells.size()) ? '\n' : ',';
  }
}

void CsvWriter::row_doubles(const std::vector<double>& cells) {
  std::vector<std::string> s;
  s.reserve(cells.size());
  for (double v : cells) s.push_back(format_double(v));
  row(s);
}

void CsvWriter::close() {
  if (closed_) return;
  std::filesystem::create_directories(path_.parent_path().empty() ? "." : path_.parent_path());
  std::ofstream out(path_, std::ios::binary);
  out << buffer_;
  closed_ = true;
}

CsvWriter::~CsvWriter() {
  try { close(); } catch (...) {}
}

void parallel_trials(std::size_t n_trials, unsigned workers,
                     const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n_trials <= 1) {
    for (std::size_t i = 0; i < n_trials; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n_trials) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

std::string Manifest::render() const {
  std::string out = std::string("code_version=") + kCodeVersion + "\n";
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

void Manifest::write(const std::filesystem::path& file) const {
  std::filesystem::create_directories(file.parent_path().empty() ? "." : file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << render();
}

}  // namespace qpsim::exp
