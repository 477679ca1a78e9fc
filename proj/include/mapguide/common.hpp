#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mapguide {

// Row-major so that one row is one TR / one sample / one token.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Error taxonomy. The `kind()` string is what the CLI reports as `code`.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MAPGUIDE_DEFINE_ERROR(Name, code)                                \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(code, message) {} \
  };

MAPGUIDE_DEFINE_ERROR(FormatError, "format_error")
MAPGUIDE_DEFINE_ERROR(ValidationError, "validation_error")
MAPGUIDE_DEFINE_ERROR(IntegrityError, "integrity_error")
MAPGUIDE_DEFINE_ERROR(ShapeError, "shape_error")
MAPGUIDE_DEFINE_ERROR(ArgumentError, "argument_error")
MAPGUIDE_DEFINE_ERROR(VocabularyError, "vocabulary_error")
MAPGUIDE_DEFINE_ERROR(FitError, "fit_error")
MAPGUIDE_DEFINE_ERROR(ConfigurationError, "configuration_error")
MAPGUIDE_DEFINE_ERROR(UndefinedError, "undefined_error")

#undef MAPGUIDE_DEFINE_ERROR

// Input-side errors map to CLI exit code 2, everything else to 3.
inline bool is_validation_kind(const Error& e) {
  const auto& k = e.kind();
  return k == "format_error" || k == "validation_error" || k == "shape_error" ||
         k == "argument_error" || k == "vocabulary_error" || k == "configuration_error" ||
         k == "integrity_error";
}

// Cosine similarity; zero vectors give 0.
template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.cwiseProduct(b).sum() / (na * nb);
}

}  // namespace mapguide
