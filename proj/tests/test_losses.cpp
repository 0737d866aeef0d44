#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hitdvae/gradcheck.hpp"
#include "hitdvae/json_util.hpp"
#include "hitdvae/losses.hpp"
#include "hitdvae/optim.hpp"
#include "test_util.hpp"

using namespace hitdvae;
using namespace testutil;

namespace {

LossTerms unit_terms(double v = 1.0) {
  LossTerms t;
  for (auto& x : t.terms) x = Tensor::scalar(v);
  return t;
}

// Brute-force KL(q || p) by Monte Carlo over diagonal Gaussians.
double mc_kl(const std::vector<double>& mq, const std::vector<double>& lq, const std::vector<double>& mp,
             const std::vector<double>& lp, std::size_t draws, Rng& rng) {
  double acc = 0;
  for (std::size_t n = 0; n < draws; ++n) {
    double lr = 0;
    for (std::size_t d = 0; d < mq.size(); ++d) {
      const double sq = std::exp(0.5 * lq[d]);
      const double x = mq[d] + sq * rng.normal();
      const double eq = (x - mq[d]) / sq;
      const double ep = (x - mp[d]) / std::exp(0.5 * lp[d]);
      lr += -0.5 * eq * eq - 0.5 * lq[d] + 0.5 * ep * ep + 0.5 * lp[d];
    }
    acc += lr;
  }
  return acc / static_cast<double>(draws);
}

Skeleton two_bone() {
  Skeleton s;
  s.name = "toy";
  s.joint_names = {"root", "mid", "tip"};
  s.edges = {{0, 1, 1.0}, {1, 2, 0.5}};
  s.lower_body = {1};
  s.upper_body = {2};
  s.hinges = {{"mid", 0, 1, 2, 1.0, 2.5}};
  return s;
}

}  // namespace

TEST_CASE("loss weights") {
  const LossWeights h = LossWeights::humaneva();
  LossBreakdown b;
  total_loss(unit_terms(), h, 1.0, &b);
  CHECK(b.total == doctest::Approx(116.901).epsilon(1e-12));
  CHECK(LossWeights::human36m().recon == 20.0);
  CHECK(LossWeights::human36m().alpha_upper == 300.0);
  const nlohmann::json j = h.to_json();
  const LossWeights back = LossWeights::from_json(j);
  CHECK(back.nf == h.nf);
  nlohmann::json bad = j;
  bad["limb"] = -1.0;
  CHECK_THROWS_AS(LossWeights::from_json(bad), ConfigError);
  bad = j;
  bad["alpha_lower"] = 0.0;
  CHECK_THROWS_AS(LossWeights::from_json(bad), ConfigError);
}

TEST_CASE("total loss") {
  const LossWeights h = LossWeights::humaneva();
  LossBreakdown b;
  CHECK(total_loss(unit_terms(0.0), h, 1.0, &b).item() == 0.0);
  const Tensor t = total_loss(unit_terms(), h, 0.0, &b);
  CHECK(t.item() == doctest::Approx(116.901 - 0.5 - 0.1).epsilon(1e-12));
  CHECK(b.weighted[kKlZ] == 0.0);
  double s = 0;
  for (double v : b.weighted) s += v;
  CHECK(s == doctest::Approx(b.total).epsilon(1e-14));
  LossTerms nan = unit_terms();
  nan[kAngle] = Tensor::scalar(std::nan(""));
  CHECK_THROWS_WITH_AS(total_loss(nan, h, 1.0), "total loss: term A is not finite", NumericError);
}

TEST_CASE("reconstruction losses") {
  Rng rng(1);
  const Tensor gt = random_tensor({1, 12}, rng);
  SUBCASE("exact sample gives zero") {
    const Tensor samples = concat({random_tensor({1, 12}, rng), gt, random_tensor({1, 12}, rng)}, 0);
    CHECK(recon_loss(samples, gt).item() == 0.0);
  }
  SUBCASE("single pseudo equal to gt reproduces L_R") {
    const Tensor samples = random_tensor({4, 12}, rng);
    CHECK(multimodal_loss(samples, gt).item() == recon_loss(samples, gt).item());
  }
  SUBCASE("min-over-k loop oracle, K=3, T=2, J=2") {
    const Tensor samples = random_tensor({3, 12}, rng);
    const Tensor pseudo = random_tensor({2, 12}, rng);
    auto brute = [&](std::size_t m_row, const Tensor& target) {
      double best = 1e300;
      for (std::size_t k = 0; k < 3; ++k) {
        double s = 0;
        for (std::size_t i = 0; i < 12; ++i) {
          const double d = samples.at(k, i) - target.at(m_row, i);
          s += d * d;
        }
        best = std::min(best, s / 12.0);
      }
      return best;
    };
    CHECK(recon_loss(samples, gt).item() == doctest::Approx(brute(0, gt)).epsilon(1e-14));
    CHECK(multimodal_loss(samples, pseudo).item() ==
          doctest::Approx(0.5 * (brute(0, pseudo) + brute(1, pseudo))).epsilon(1e-14));
  }
  SUBCASE("permutation invariance") {
    const Tensor samples = random_tensor({3, 12}, rng);
    const Tensor pseudo = random_tensor({3, 12}, rng);
    const Tensor perm = concat({row(samples, 2), row(samples, 0), row(samples, 1)}, 0);
    const Tensor pperm = concat({row(pseudo, 1), row(pseudo, 2), row(pseudo, 0)}, 0);
    CHECK(recon_loss(perm, gt).item() == recon_loss(samples, gt).item());
    CHECK(multimodal_loss(perm, pperm).item() == doctest::Approx(multimodal_loss(samples, pseudo).item()).epsilon(1e-15));
  }
  SUBCASE("empty sets rejected") {
    CHECK_THROWS(recon_loss(Tensor::zeros({0, 12}), gt));
    CHECK_THROWS(multimodal_loss(random_tensor({2, 12}, rng), Tensor::zeros({0, 12})));
  }
}

TEST_CASE("kl terms") {
  SUBCASE("identical") {
    const DiagGaussian g{Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 2}, {0.1, -0.2, 0.3, 0.0})};
    CHECK(kl_diag(g, g).item() == 0.0);
  }
  SUBCASE("closed forms") {
    const DiagGaussian q{Tensor::from({1, 1}, {1.0}), Tensor::zeros({1, 1})};
    const DiagGaussian p{Tensor::zeros({1, 1}), Tensor::zeros({1, 1})};
    CHECK(std::fabs(kl_diag(q, p).item() - 0.5) < 1e-12);
    std::vector<double> mu(32, 0.0);
    mu[0] = 1.0;
    CHECK(std::fabs(kl_standard({Tensor::from({1, 32}, mu), Tensor::zeros({1, 32})}).item() - 0.5) < 1e-12);
    CHECK(kl_standard({Tensor::zeros({1, 32}), Tensor::zeros({1, 32})}).item() == 0.0);
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(kl_diag({Tensor::zeros({1, 2}), Tensor::zeros({1, 2})}, {Tensor::zeros({1, 3}), Tensor::zeros({1, 3})}),
                    ShapeError);
  }
  SUBCASE("Monte Carlo oracle, 10^6 draws") {
    Rng rng(2);
    const std::vector<double> mq{0.7, -0.4}, lq{-0.3, 0.5}, mp{-0.2, 0.6}, lp{0.4, -0.1};
    const double analytic = kl_diag({Tensor::from({1, 2}, mq), Tensor::from({1, 2}, lq)},
                                    {Tensor::from({1, 2}, mp), Tensor::from({1, 2}, lp)})
                                .item();
    const double mc = mc_kl(mq, lq, mp, lp, 1000000, rng);
    CHECK(std::fabs(mc - analytic) < 0.01 * analytic);
    const double analytic_w = kl_standard({Tensor::from({1, 2}, mq), Tensor::from({1, 2}, lq)}).item();
    const double mc_w = mc_kl(mq, lq, {0, 0}, {0, 0}, 1000000, rng);
    CHECK(std::fabs(mc_w - analytic_w) < 0.01 * analytic_w);
  }
}

TEST_CASE("diversity loss") {
  Rng rng(3);
  const std::vector<std::size_t> lower{1}, upper{2};
  SUBCASE("identical samples reach the weight sum") {
    const Tensor one = random_tensor({1, 18}, rng);
    const Tensor same = concat({one, one, one}, 0);
    const LossWeights w = LossWeights::humaneva();
    const double v = w.div_lower * diversity_term(same, 3, lower, w.alpha_lower).item() +
                     w.div_upper * diversity_term(same, 3, upper, w.alpha_upper).item();
    CHECK(std::fabs(v - (w.div_lower + w.div_upper)) < 1e-12);
  }
  SUBCASE("far-apart samples vanish") {
    const Tensor far = concat({Tensor::zeros({1, 18}), Tensor::full({1, 18}, 1e6)}, 0);
    CHECK(diversity_term(far, 3, lower, 15.0).item() < 1e-300);
  }
  SUBCASE("pairwise loop oracle") {
    const Tensor s = random_tensor({3, 18}, rng);
    double acc = 0;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b) {
        double l1 = 0;
        for (std::size_t f = 0; f < 2; ++f)
          for (std::size_t c = 0; c < 3; ++c) l1 += std::fabs(s.at(a, f * 9 + 6 + c) - s.at(b, f * 9 + 6 + c));
        acc += std::exp(-l1 / 0.7);
      }
    CHECK(std::fabs(diversity_term(s, 3, upper, 0.7).item() - acc * 2.0 / 6.0) < 1e-14);
  }
  SUBCASE("strictly decreasing in a pair distance") {
    Tensor t = random_tensor({2, 18}, rng);
    // Move sample 0 beyond sample 1 on one upper-body coordinate, then further away.
    t.mutable_values()[6] = t[18 + 6] + 0.5;
    const double before = diversity_term(t, 3, upper, 1.0).item();
    t.mutable_values()[6] += 0.25;
    CHECK(diversity_term(t, 3, upper, 1.0).item() < before);
  }
  SUBCASE("needs two samples") { CHECK_THROWS(diversity_term(random_tensor({1, 18}, rng), 3, upper, 1.0)); }
}

TEST_CASE("limb loss") {
  const Skeleton s = two_bone();
  SUBCASE("exact lengths") {
    const Tensor p = Tensor::from({1, 9}, {0, 0, 0, 0, 1, 0, 0.3, 1.4, 0});
    CHECK(limb_loss(p, s).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  }
  SUBCASE("doubling all joints") {
    const Tensor p = Tensor::from({1, 9}, {0, 0, 0, 0, 2, 0, 0.6, 2.8, 0});
    CHECK(limb_loss(p, s).item() == doctest::Approx((1.0 + 0.25) / 2.0).epsilon(1e-14));
  }
  SUBCASE("per-edge loop oracle") {
    Rng rng(4);
    const Skeleton sk = Skeleton::synthetic9();
    const PoseSequence x = random_pose(3, 9, rng);
    double acc = 0;
    for (std::size_t t = 0; t < 3; ++t)
      for (const auto& e : sk.edges) {
        double l = 0;
        for (std::size_t a = 0; a < 3; ++a) l += std::pow(x.at(t, e.child, a) - x.at(t, e.parent, a), 2);
        acc += std::pow(std::sqrt(l) - e.length, 2);
      }
    CHECK(std::fabs(limb_loss(x.flat_tensor(), sk).item() - acc / 24.0) < 1e-14);
  }
}

TEST_CASE("angle loss") {
  const Skeleton s = two_bone();
  SUBCASE("inside limits") {
    const Tensor p = Tensor::from({1, 9}, {0, 0, 0, 0, 1, 0, 0.5, 1, 0});  // right angle
    CHECK(angle_loss(p, s).loss.item() == 0.0);
  }
  SUBCASE("exceeding max by 0.1") {
    const double ang = 2.6;  // max 2.5
    // bone to parent points down (-y); rotate the child bone by `ang` from it.
    const Tensor p = Tensor::from({1, 9}, {0, 0, 0, 0, 1, 0, 0.5 * std::sin(ang), 1 - 0.5 * std::cos(ang), 0});
    CHECK(angle_loss(p, s).loss.item() == doctest::Approx(0.01).epsilon(1e-10));
  }
  SUBCASE("arccos oracle on random poses") {
    Rng rng(5);
    const Skeleton sk = Skeleton::synthetic9();
    const PoseSequence x = random_pose(4, 9, rng);
    double acc = 0;
    for (std::size_t t = 0; t < 4; ++t) {
      const auto angles = hinge_angles(x.frame(t), sk);
      for (std::size_t h = 0; h < sk.hinges.size(); ++h) {
        const double v = std::max(0.0, angles[h] - sk.hinges[h].max_angle) +
                         std::max(0.0, sk.hinges[h].min_angle - angles[h]);
        acc += v * v;
      }
    }
    CHECK(std::fabs(angle_loss(x.flat_tensor(), sk).loss.item() - acc / 4.0) < 1e-10);
  }
  SUBCASE("zero-length bone is skipped and counted") {
    const Tensor p = Tensor::from({2, 9}, {0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0.2, 1.1, 0});
    const auto r = angle_loss(p, s);
    CHECK(r.skipped == 1);
    CHECK(std::isfinite(r.loss.item()));
    // only the second frame contributes
    const double ang = std::acos(-0.1 / std::sqrt(0.05));
    const double v = std::max(0.0, ang - 2.5) + std::max(0.0, 1.0 - ang);
    CHECK(r.loss.item() == doctest::Approx(v * v / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("nf loss") {
  Rng rng(6);
  SUBCASE("identity flow at the zero pose") {
    CouplingFlow flow(6, 4, 32, rng);
    CHECK(nf_loss(Tensor::zeros({1, 9}), flow, 0.0).item() == doctest::Approx(5.5136).epsilon(1e-4));
  }
  SUBCASE("line scan away from a trained 2-d toy mode never decreases the loss") {
    CouplingFlow flow(2, 4, 16, rng);
    std::vector<double> data;
    for (int i = 0; i < 256; ++i) {
      data.push_back(0.3 * rng.normal());
      data.push_back(0.2 * rng.normal());
    }
    flow.set_standardization({0, 0}, {0.3, 0.2});
    ParamList params = flow.parameters();
    AdamState st(0.005);
    const Tensor batch = Tensor::from({256, 2}, data);
    for (int step = 0; step < 100; ++step) {
      backward(neg(mean(flow.log_prob(batch))));
      adam_step(params, st);
    }
    NoGradGuard guard;
    // Calibrate at the median training -log p; the mode sits below it.
    std::vector<double> nll;
    const Tensor lp_train = flow.log_prob(batch);
    for (double v : lp_train.values()) nll.push_back(-v);
    std::nth_element(nll.begin(), nll.begin() + 128, nll.end());
    const double c = nll[128];
    const double at_mode = -flow.log_prob(Tensor::zeros({1, 2})).item();
    CHECK(std::max(0.0, at_mode - c) == 0.0);
    double prev = -1;
    for (std::size_t i = 0; i <= 60; ++i) {
      const double r = 0.05 * static_cast<double>(i);
      const double lp = -flow.log_prob(Tensor::from({1, 2}, {0.6 * r, 0.8 * r})).item();
      const double loss = std::max(0.0, lp - c);
      CHECK(loss >= prev);
      prev = loss;
    }
    CHECK(prev > 0.0);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(7);
  const Skeleton sk = Skeleton::synthetic9();
  const Tensor x = random_pose(3, 9, rng).flat_tensor();
  CHECK(grad_check([&](const Tensor& p) { return limb_loss(p, sk); }, x, 1e-5).passed(1e-6));
  Skeleton tight = sk;
  for (auto& h : tight.hinges) {
    h.min_angle = 1.2;
    h.max_angle = 1.9;
  }
  CHECK(grad_check([&](const Tensor& p) { return angle_loss(p, tight).loss; }, x, 1e-5).passed(1e-6));
  CHECK(grad_check([&](const Tensor& s) { return diversity_term(s, 9, sk.upper_body, 3.0); }, random_tensor({3, 54}, rng),
                   1e-5)
            .passed(1e-6));
  const Tensor gt = random_tensor({1, 6}, rng);
  CHECK(grad_check([&](const Tensor& s) { return recon_loss(s, gt); }, random_tensor({3, 6}, rng), 1e-5).passed(1e-6));
  const DiagGaussian p{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)};
  CHECK(grad_check([&](const Tensor& m) { return kl_diag({m, scale(m, 0.5)}, p); }, random_tensor({3, 2}, rng), 1e-5)
            .passed(1e-6));
  CouplingFlow flow(24, 2, 8, rng);
  for (auto& q : flow.parameters())
    for (double& v : q.tensor.mutable_values()) v += 0.2 * rng.normal();
  CHECK(grad_check([&](const Tensor& s) { return nf_loss(s, flow, -40.0); }, x, 1e-5).passed(1e-6));
}

TEST_CASE("skeleton validation") {
  const Skeleton s = Skeleton::synthetic9();
  CHECK_NOTHROW(s.validate());
  CHECK(Skeleton::from_json(s.to_json()) == s);
  Skeleton bad = s;
  bad.upper_body.push_back(7);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.edges[7].child = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  nlohmann::json j = s.to_json();
  j["hinges"][0]["maxx"] = 1.0;
  CHECK_THROWS_WITH_AS(Skeleton::from_json(j), "skeleton.hinges[0].maxx: unknown key", ConfigError);
}
