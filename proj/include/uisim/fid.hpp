#pragma once

// Fréchet distance between Gaussian fits of image-feature distributions:
//
//   d(a, b) = |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))
//
// The trace of the matrix square root is taken from the symmetric matrix
// S_a^(1/2) S_b S_a^(1/2), which has the same eigenvalues as S_a S_b.

#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "uisim/http_client.hpp"
#include "uisim/image.hpp"

namespace uisim {

inline constexpr double kSymmetryTolerance = 1e-8;
inline constexpr double kPsdTolerance = 1e-6;

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t n = 0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  // Throws TooFewSamples, DimensionMismatch or NumericalFailure (asymmetric,
  // or an eigenvalue below -1e-6).
  void validate() const;
};

// Sample mean and unbiased (n-1) covariance, accumulated by pairwise
// summation in a fixed order.
FeatureStats fit_stats(const std::vector<std::vector<double>>& features);

enum class SqrtMethod { kSymmetricEigen, kNewtonSchulz };

// Square root of a symmetric PSD matrix by eigendecomposition; eigenvalues
// below zero are clamped.
Eigen::MatrixXd sqrtm_symmetric_eigen(const Eigen::MatrixXd& m);

// Coupled Newton-Schulz iteration on m / |m|_F. Throws NumericalFailure when
// it does not converge within `max_iterations`.
Eigen::MatrixXd sqrtm_newton_schulz(const Eigen::MatrixXd& m, int max_iterations = 200);

// Tr((S_a S_b)^(1/2)).
double trace_sqrt_product(const Eigen::MatrixXd& cov_a, const Eigen::MatrixXd& cov_b,
                          SqrtMethod method = SqrtMethod::kSymmetricEigen);

double frechet_distance(const FeatureStats& a, const FeatureStats& b,
                        SqrtMethod method = SqrtMethod::kSymmetricEigen);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
  // 0 until known for extractors that learn it from the first response.
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> extract(const Image& image) const = 0;
};

// Handcrafted deterministic features on a 6x10 grid of cells. Per cell:
// fraction of pixels below/above mid-level in each of R, G, B (6 values) and
// the horizontal and vertical edge densities (2 values); d = 480.
class BuiltinExtractor final : public FeatureExtractor {
 public:
  static constexpr int kGridCols = 6;
  static constexpr int kGridRows = 10;
  static constexpr int kPerCell = 8;
  static constexpr int kEdgeThreshold = 24;

  std::string name() const override { return "builtin-grid"; }
  std::string version() const override { return "1"; }
  std::size_t dim() const override { return kGridCols * kGridRows * kPerCell; }
  std::vector<double> extract(const Image& image) const override;
};

// POST {base}/v1/embed {image_png_base64} -> {features: [...], version?}
class RemoteExtractor final : public FeatureExtractor {
 public:
  explicit RemoteExtractor(const std::string& base_url, std::size_t expected_dim = 0,
                           std::chrono::milliseconds timeout = std::chrono::seconds(60));
  std::string name() const override;
  std::string version() const override;
  std::size_t dim() const override;
  std::vector<double> extract(const Image& image) const override;

 private:
  JsonHttpClient client_;
  mutable std::mutex mu_;
  mutable std::size_t dim_;
  mutable std::string version_;
};

struct FidReport {
  double score = 0;
  std::size_t n_generated = 0;
  std::size_t n_reference = 0;
  std::string extractor;
  std::string extractor_version;
  std::size_t feature_dim = 0;
  std::string covariance = "unbiased";
  std::string sqrt_method = "symmetric_eigen";

  // Reports are comparable only under the same extractor name and version.
  std::string extractor_tag() const { return extractor + "@" + extractor_version; }

  nlohmann::json to_json() const;
  static FidReport from_json(const nlohmann::json& j);
};

std::vector<std::vector<double>> extract_all(const std::vector<Image>& images,
                                             const FeatureExtractor& extractor);

FidReport evaluate_fid(const std::vector<Image>& generated, const std::vector<Image>& reference,
                       const FeatureExtractor& extractor);

// baseline.score - candidate.score; throws IncomparableReports when the
// extractor tags differ.
double fid_improvement(const FidReport& baseline, const FidReport& candidate);

}  // namespace uisim
