#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "hitdvae/nn.hpp"
#include "hitdvae/pose.hpp"
#include "hitdvae/skeleton.hpp"

namespace hitdvae {

struct LossWeights {
  double recon = 10.0;
  double multimodal = 5.0;
  double kl_z = 0.5;
  double kl_w = 0.1;
  double div_lower = 0.1;
  double div_upper = 0.2;
  double limb = 100.0;
  double angle = 1.0;
  double nf = 0.001;
  double alpha_lower = 15.0;
  double alpha_upper = 50.0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static LossWeights from_json(const nlohmann::json& j, const std::string& path = "weights");

  static LossWeights humaneva();
  static LossWeights human36m();
};

/// Term order used in breakdowns and CSV output.
enum LossTerm : std::size_t { kRecon, kMultimodal, kKlZ, kKlW, kDivLower, kDivUpper, kLimb, kAngle, kNf, kTermCount };
extern const std::array<const char*, kTermCount> kLossTermNames;

/// Unweighted scalar loss terms of one training example.
struct LossTerms {
  std::array<Tensor, kTermCount> terms;
  Tensor& operator[](LossTerm t) { return terms[t]; }
  const Tensor& operator[](LossTerm t) const { return terms[t]; }
};

struct LossBreakdown {
  std::array<double, kTermCount> raw{};
  std::array<double, kTermCount> weighted{};
  double anneal = 1.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double f) const;
};

/// total = R*wR + MM*wMM + anneal*(KLz*wz + KLw*ww) + DIVl*wl + DIVu*wu + L*wL + A*wA + NF*wNF.
/// Throws NumericError naming the first non-finite term.
Tensor total_loss(const LossTerms& terms, const LossWeights& w, double anneal, LossBreakdown* breakdown = nullptr);

/// min over the K rows of samples (K x N) of the mean squared error to target (1 x N).
Tensor recon_loss(const Tensor& samples, const Tensor& target);
/// Mean over the M pseudo-ground-truth rows (M x N) of recon_loss against each.
Tensor multimodal_loss(const Tensor& samples, const Tensor& pseudo);

/// Mean over rows of KL(q_r || p_r), each summed over the Gaussian width.
Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p);
/// Mean over rows of KL(q_r || N(0, I)).
Tensor kl_standard(const DiagGaussian& q);

/// (2 / (K(K-1))) sum_{k<k'} exp(-||x_k - x_k'||_1 / alpha) restricted to `joints`.
/// samples is K x (F*J*3): K flattened sequences of F frames.
Tensor diversity_term(const Tensor& samples, std::size_t joints_per_frame, const std::vector<std::size_t>& part,
                      double alpha);

/// Mean over frames and edges of (edge length - reference)^2. poses is N x (J*3).
Tensor limb_loss(const Tensor& poses, const Skeleton& skeleton);

struct AngleLossResult {
  Tensor loss;
  std::size_t skipped = 0;  // hinge evaluations dropped for a zero-length bone
};
/// Per frame, the sum over hinges of the squared violation outside [min, max]; mean over frames.
AngleLossResult angle_loss(const Tensor& poses, const Skeleton& skeleton);
/// Hinge angles of one pose, in hinge order (NaN for degenerate hinges).
std::vector<double> hinge_angles(std::span<const double> pose, const Skeleton& skeleton);

/// The flow models the non-root coordinates: columns 3.. of N x (J*3) poses.
Tensor nonroot_coordinates(const Tensor& poses);
/// Mean over rows of relu(-log p(x) - calibration).
Tensor nf_loss(const Tensor& poses, const CouplingFlow& flow, double calibration);

}  // namespace hitdvae
