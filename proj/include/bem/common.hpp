#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace bem {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Embedding tables keep one entity per row; row-major keeps each row contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

// Error taxonomy. The CLI maps these onto exit codes (see ErrorKind).
enum class ErrorKind { Usage, Data, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::Data, "shape error: " + w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Data, "configuration error: " + w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::Data, "parse error: " + w) {}
};
struct AlignmentError : Error {
  explicit AlignmentError(const std::string& w) : Error(ErrorKind::Data, "alignment error: " + w) {}
};
struct ModelFileError : Error {
  explicit ModelFileError(const std::string& w) : Error(ErrorKind::Data, "model file error: " + w) {}
};
struct EvalError : Error {
  explicit EvalError(const std::string& w) : Error(ErrorKind::Data, "evaluation error: " + w) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& w) : Error(ErrorKind::Numerical, "training error: " + w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::Numerical, "numerical error: " + w) {}
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

/// Independent generator for a named sub-stream of a master seed, so that
/// e.g. the "train" and "eval" consumers never perturb each other's draws.
Rng make_stream(std::uint64_t seed, std::string_view name);

/// Fills `out` with i.i.d. standard normal draws, in index order.
void fill_normal(Rng& rng, Eigen::Ref<Vector> out);

/// CRC-32 (IEEE) over a byte range; `crc` chains successive calls.
std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t crc = 0);

}  // namespace bem
