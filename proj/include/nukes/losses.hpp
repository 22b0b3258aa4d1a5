#pragma once

#include "nukes/model.hpp"

namespace nukes {

struct LossWeights {
  double cycle = 1.0;        // lambda_1
  double non_degraded = 0.5; // lambda_2
  double adversarial = 1.0;  // lambda_3
  double spectral = 0.25;    // lambda_4
  double geometric = 0.25;   // lambda_5
  void validate() const;
};

struct PatchCodes {
  Var query;
  Var positive;
  std::vector<Var> negatives;
  double tau_spectral = 0.5;
  double tau_geometric = 0.07;
};

Var mse(Var a, Var b);

// mean-squared reconstruction error of both domain round trips
Var cycle_loss(Var x, Var y_hat, Var x_r, Var y_hat_r);

// InfoNCE over exp(-angle/tau); angle is the spectral angle in radians
Var spectral_contrastive(const PatchCodes& codes);
// InfoNCE over exp(cos/tau)
Var geometric_contrastive(const PatchCodes& codes);

// query from codes_a, positive from codes_b at the same spatial index,
// negatives from other indices of both maps; deterministic per seed
std::vector<PatchCodes> dcpm_sample(Tape& t, Var codes_a, Var codes_b, int n_patches,
                                    int n_negatives, uint64_t seed);

Var mean_loss(Tape& t, const std::vector<Var>& parts);

struct AdvLoss {
  Var gen_term;   // non-saturating: -E log D(fake), both domains
  Var disc_term;  // E log D(real) + E log(1-D(fake)), both domains (maximized by D)
};

AdvLoss adversarial_loss(Tape& t, Binder& disc_bind, const Discriminator& d_h,
                         const Discriminator& d_r, Var real_x, Var real_y_hat, Var fake_x_hat_f,
                         Var fake_y_f);

Var non_degraded_loss(Tape& t, Binder& bind, const Generator& g_rh, const Generator& g_hr,
                      Var x, Var y_hat);

struct LossParts {
  Var cycle;
  Var non_degraded;
  Var adversarial;
  Var spectral;
  Var geometric;
};

Var total_loss(Tape& t, const LossParts& parts, const LossWeights& w);

}  // namespace nukes
