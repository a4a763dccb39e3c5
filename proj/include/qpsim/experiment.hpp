#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qpsim/numkit.hpp"

// Batch-experiment plumbing: counter-based RNG so parallel and serial runs
// agree, key=value config files, manifest emission and CSV output with a
// manifest hash comment.

namespace qpsim::exp {

// SplitMix64. Chosen over std engines so trial streams are reproducible
// bit-for-bit regardless of library version or worker count.
class Rng {
 public:
  using result_type = std::uint64_t;
  explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ULL) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type(0); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call keeps the stream layout obvious.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  std::uint64_t integer(std::uint64_t n) { return (*this)() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Sample an index from an (unnormalized is fine) weight vector.
  std::size_t categorical(const std::vector<double>& w);

 private:
  std::uint64_t state_;
};

inline Rng trial_rng(std::uint64_t master_seed, std::uint64_t trial_index) {
  return Rng(master_seed ^ (0xd1342543de82ef95ULL * (trial_index + 1)));
}

numkit::Matrix random_hermitian(Eigen::Index n, Rng& rng, double scale = 1.0);
numkit::Matrix random_unitary(Eigen::Index n, Rng& rng);
numkit::Vector random_state(Eigen::Index n, Rng& rng);
numkit::DensityOperator random_density(Eigen::Index n, Eigen::Index rank, Rng& rng);

// ---------------------------------------------------------------------
// key=value config files (one pair per line, # comments).

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& file);
// Throws listing the offenders when a key is not in `allowed`.
void reject_unknown_keys(const KeyValues& kv, const std::vector<std::string>& allowed,
                         const std::string& context);

double get_double(const KeyValues& kv, const std::string& key);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
std::int64_t get_int(const KeyValues& kv, const std::string& key, std::int64_t fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

// Deterministic float formatting (shortest round-trip-safe form).
std::string format_double(double v);

std::uint64_t fnv1a(const std::string& data);

// ---------------------------------------------------------------------
// CSV with a leading manifest-hash comment; rows are preformatted cells.

class CsvWriter {
 public:
  CsvWriter(std::filesystem::path file, std::vector<std::string> columns,
            std::uint64_t manifest_hash);
  void row(const std::vector<std::string>& cells);
  void row_doubles(const std::vector<double>& cells);
  void close();
  ~CsvWriter();

 private:
  std::filesystem::path path_;
  std::string buffer_;
  std::size_t ncols_;
  bool closed_ = false;
};

// Run fn(trial_index) for each trial on `workers` threads; results are
// written by index so the merge order never depends on scheduling.
void parallel_trials(std::size_t n_trials, unsigned workers,
                     const std::function<void(std::size_t)>& fn);

struct Manifest {
  KeyValues entries;
  std::string render() const;
  std::uint64_t hash() const { return fnv1a(render()); }
  void write(const std::filesystem::path& file) const;
};

inline const char* kCodeVersion = "qpsim 0.1.0";

}  // namespace qpsim::exp
