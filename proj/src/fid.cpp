#include "uisim/fid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "uisim/codec.hpp"
#include "uisim/error.hpp"

namespace uisim {
namespace {

constexpr std::size_t kPairwiseBlock = 8;

Error dim_mismatch(const std::string& msg) { return Error(ErrorCode::kDimensionMismatch, msg); }

Eigen::VectorXd pairwise_sum(const std::vector<std::vector<double>>& xs, std::size_t lo,
                             std::size_t hi, std::size_t d) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  if (hi - lo <= kPairwiseBlock) {
    for (std::size_t i = lo; i < hi; ++i)
      acc += Eigen::Map<const Eigen::VectorXd>(xs[i].data(), static_cast<Eigen::Index>(d));
    return acc;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(xs, lo, mid, d) + pairwise_sum(xs, mid, hi, d);
}

Eigen::MatrixXd pairwise_scatter(const std::vector<std::vector<double>>& xs,
                                 const Eigen::VectorXd& mean, std::size_t lo, std::size_t hi) {
  const auto d = mean.size();
  if (hi - lo <= kPairwiseBlock) {
    Eigen::MatrixXd centered(d, static_cast<Eigen::Index>(hi - lo));
    for (std::size_t i = lo; i < hi; ++i)
      centered.col(static_cast<Eigen::Index>(i - lo)) =
          Eigen::Map<const Eigen::VectorXd>(xs[i].data(), d) - mean;
    return centered * centered.transpose();
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_scatter(xs, mean, lo, mid) + pairwise_scatter(xs, mean, mid, hi);
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen_solve(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetrized(m));
  if (solver.info() != Eigen::Success)
    throw Error(ErrorCode::kNumericalFailure, "symmetric eigensolver did not converge");
  return solver;
}

// Trace of the square root of a symmetric PSD matrix from its eigenvalues.
// Eigenvalues below the solver's resolution (d * eps * lambda_max) are
// rounding noise and contribute zero.
double trace_sqrt_eigen(const Eigen::MatrixXd& m) {
  const auto solver = eigen_solve(m);
  const auto& ev = solver.eigenvalues();
  if (ev.size() == 0) return 0;
  const double cutoff = static_cast<double>(ev.size()) * std::numeric_limits<double>::epsilon() *
                        std::max(ev.maxCoeff(), 0.0);
  double sum = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev[i] > cutoff) sum += std::sqrt(ev[i]);
  return sum;
}

}  // namespace

void FeatureStats::validate() const {
  if (n < 2) throw Error(ErrorCode::kTooFewSamples, "feature stats need at least 2 samples");
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw dim_mismatch("covariance shape does not match the mean");
  if (!mean.allFinite() || !cov.allFinite())
    throw Error(ErrorCode::kNumericalFailure, "feature stats contain non-finite values");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance)
    throw Error(ErrorCode::kNumericalFailure, "covariance is not symmetric");
  if (cov.size() > 0 && eigen_solve(cov).eigenvalues().minCoeff() < -kPsdTolerance)
    throw Error(ErrorCode::kNumericalFailure, "covariance is not positive semi-definite");
}

FeatureStats fit_stats(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) throw Error(ErrorCode::kTooFewSamples, "need at least 2 feature vectors");
  const std::size_t d = features.front().size();
  for (const auto& f : features)
    if (f.size() != d)
      throw dim_mismatch("feature vectors have dimensions " + std::to_string(d) + " and " +
                         std::to_string(f.size()));
  FeatureStats s;
  s.n = features.size();
  const auto n = static_cast<double>(s.n);
  s.mean = pairwise_sum(features, 0, features.size(), d) / n;
  s.cov = symmetrized(pairwise_scatter(features, s.mean, 0, features.size())) / (n - 1);
  return s;
}

Eigen::MatrixXd sqrtm_symmetric_eigen(const Eigen::MatrixXd& m) {
  const auto solver = eigen_solve(m);
  const Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return symmetrized(solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose());
}

Eigen::MatrixXd sqrtm_newton_schulz(const Eigen::MatrixXd& m, int max_iterations) {
  const auto d = m.rows();
  const double norm = m.norm();
  if (norm == 0) return Eigen::MatrixXd::Zero(d, d);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd y = m / norm;
  Eigen::MatrixXd z = eye;
  double prev_change = std::numeric_limits<double>::infinity();
  for (int k = 0; k < max_iterations; ++k) {
    const Eigen::MatrixXd t = 0.5 * (3.0 * eye - z * y);
    Eigen::MatrixXd y_next = y * t;
    z = t * z;
    const double change = (y_next - y).norm() / y_next.norm();
    y = std::move(y_next);
    if (!y.allFinite()) break;
    // Converged once updates reach rounding level or stop shrinking there.
    if (change < 1e-15 || (change < 1e-10 && change >= prev_change))
      return symmetrized(y) * std::sqrt(norm);
    prev_change = change;
  }
  throw Error(ErrorCode::kNumericalFailure, "Newton-Schulz iteration did not converge");
}

double trace_sqrt_product(const Eigen::MatrixXd& cov_a, const Eigen::MatrixXd& cov_b,
                          SqrtMethod method) {
  if (cov_a.rows() != cov_b.rows() || cov_a.cols() != cov_b.cols())
    throw dim_mismatch("covariance dimensions differ");
  if (method == SqrtMethod::kSymmetricEigen) {
    const Eigen::MatrixXd root_a = sqrtm_symmetric_eigen(cov_a);
    return trace_sqrt_eigen(root_a * cov_b * root_a);
  }
  const Eigen::MatrixXd root_a = sqrtm_newton_schulz(cov_a);
  return sqrtm_newton_schulz(symmetrized(root_a * cov_b * root_a)).trace();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b, SqrtMethod method) {
  if (a.dim() != b.dim())
    throw dim_mismatch("feature dimensions " + std::to_string(a.dim()) + " and " +
                       std::to_string(b.dim()));
  a.validate();
  b.validate();
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double trace_term =
      a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt_product(a.cov, b.cov, method);
  const double d = mean_term + trace_term;
  if (!std::isfinite(d)) throw Error(ErrorCode::kNumericalFailure, "Fréchet distance is not finite");
  if (d < -kPsdTolerance)
    throw Error(ErrorCode::kNumericalFailure,
                "Fréchet distance is negative beyond tolerance: " + std::to_string(d));
  return std::max(d, 0.0);
}

// ---------------------------------------------------------------------------
// Extractors

std::vector<double> BuiltinExtractor::extract(const Image& image) const {
  if (!image.valid() || image.width < kGridCols || image.height < kGridRows)
    throw Error(ErrorCode::kInvalidImage, "image too small for the 6x10 feature grid");
  const auto luma = [&](int x, int y) {
    const Rgb c = image.at(x, y);
    return (299 * c.r + 587 * c.g + 114 * c.b) / 1000;
  };
  std::vector<double> out;
  out.reserve(dim());
  for (int row = 0; row < kGridRows; ++row) {
    const int y0 = row * image.height / kGridRows, y1 = (row + 1) * image.height / kGridRows;
    for (int col = 0; col < kGridCols; ++col) {
      const int x0 = col * image.width / kGridCols, x1 = (col + 1) * image.width / kGridCols;
      std::array<long, 6> bins{};
      long h_edges = 0, v_edges = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const Rgb c = image.at(x, y);
          ++bins[c.r < 128 ? 0 : 1];
          ++bins[c.g < 128 ? 2 : 3];
          ++bins[c.b < 128 ? 4 : 5];
          if (x + 1 < x1 && std::abs(luma(x + 1, y) - luma(x, y)) > kEdgeThreshold) ++h_edges;
          if (y + 1 < y1 && std::abs(luma(x, y + 1) - luma(x, y)) > kEdgeThreshold) ++v_edges;
        }
      }
      const double area = static_cast<double>((x1 - x0) * (y1 - y0));
      for (long b : bins) out.push_back(static_cast<double>(b) / area);
      out.push_back(static_cast<double>(h_edges) / area);
      out.push_back(static_cast<double>(v_edges) / area);
    }
  }
  return out;
}

RemoteExtractor::RemoteExtractor(const std::string& base_url, std::size_t expected_dim,
                                 std::chrono::milliseconds timeout)
    : client_(base_url, timeout), dim_(expected_dim), version_("unknown") {}

std::string RemoteExtractor::name() const { return "remote:" + client_.base_url(); }

std::string RemoteExtractor::version() const {
  std::lock_guard lock(mu_);
  return version_;
}

std::size_t RemoteExtractor::dim() const {
  std::lock_guard lock(mu_);
  return dim_;
}

std::vector<double> RemoteExtractor::extract(const Image& image) const {
  const auto res = client_.post("/v1/embed", {{"image_png_base64", base64_encode(encode_png(image))}});
  if (!res) throw Error(ErrorCode::kBackendUnavailable, "embedder unreachable: " + client_.base_url());
  if (res->status != 200)
    throw Error(ErrorCode::kBackendUnavailable, "embedder answered HTTP " + std::to_string(res->status),
                res->body);
  if (!res->json.is_object() || !res->json.contains("features") || !res->json["features"].is_array())
    throw Error(ErrorCode::kBackendUnavailable, "embedder response lacks features", res->body);
  std::vector<double> f;
  try {
    f = res->json["features"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kBackendUnavailable, "embedder features are not numbers", res->body);
  }
  std::lock_guard lock(mu_);
  if (dim_ == 0) dim_ = f.size();
  if (f.size() != dim_ || f.empty())
    throw dim_mismatch("embedder returned " + std::to_string(f.size()) + " features, expected " +
                       std::to_string(dim_));
  if (res->json.contains("version") && res->json["version"].is_string())
    version_ = res->json["version"].get<std::string>();
  return f;
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json FidReport::to_json() const {
  return {{"score", score},
          {"n_generated", n_generated},
          {"n_reference", n_reference},
          {"extractor", {{"name", extractor}, {"version", extractor_version}, {"dim", feature_dim}}},
          {"covariance", covariance},
          {"sqrt_method", sqrt_method}};
}

FidReport FidReport::from_json(const nlohmann::json& j) {
  FidReport r;
  try {
    r.score = j.at("score").get<double>();
    r.n_generated = j.at("n_generated").get<std::size_t>();
    r.n_reference = j.at("n_reference").get<std::size_t>();
    const auto& e = j.at("extractor");
    r.extractor = e.at("name").get<std::string>();
    r.extractor_version = e.at("version").get<std::string>();
    r.feature_dim = e.value("dim", std::size_t{0});
    r.covariance = j.value("covariance", "unbiased");
    r.sqrt_method = j.value("sqrt_method", "symmetric_eigen");
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kInvalidRequest, std::string("malformed FID report: ") + ex.what());
  }
  return r;
}

std::vector<std::vector<double>> extract_all(const std::vector<Image>& images,
                                             const FeatureExtractor& extractor) {
  std::vector<std::vector<double>> out(images.size());
  std::vector<std::exception_ptr> errors(images.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        out[i] = extractor.extract(images[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(images.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

FidReport evaluate_fid(const std::vector<Image>& generated, const std::vector<Image>& reference,
                       const FeatureExtractor& extractor) {
  if (generated.size() < 2 || reference.size() < 2)
    throw Error(ErrorCode::kTooFewSamples, "both image sets need at least 2 images");
  const FeatureStats gen = fit_stats(extract_all(generated, extractor));
  const FeatureStats ref = fit_stats(extract_all(reference, extractor));
  FidReport r;
  r.score = frechet_distance(gen, ref);
  r.n_generated = generated.size();
  r.n_reference = reference.size();
  r.extractor = extractor.name();
  r.extractor_version = extractor.version();
  r.feature_dim = gen.dim();
  return r;
}

double fid_improvement(const FidReport& baseline, const FidReport& candidate) {
  if (baseline.extractor_tag() != candidate.extractor_tag())
    throw Error(ErrorCode::kIncomparableReports,
                "FID reports use different extractors: " + baseline.extractor_tag() + " vs " +
                    candidate.extractor_tag());
  return baseline.score - candidate.score;
}

}  // namespace uisim
