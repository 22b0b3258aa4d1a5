#pragma once

#include <string>
#include <vector>

#include "nukes/tape.hpp"

namespace nukes {

struct BlockConfig {
  int channels = 8;
  int heads = 1;
  // Nukes FFN
  int degree = 3;
  int interior_knots = 8;
  double radius = 4.0;
  bool traditional_kan = false;  // fixed uniform knots, unit weights (ablation)
  // G-MSA Gabor branch
  bool use_gabor = true;
  int gabor_kernels = 4;
  int gabor_size = 7;
  double gabor_sigma = 2.0;
  bool gabor_alt_form = false;  // (y_theta/f)^2 instead of the printed (y_theta^2/f)^2

  int knot_intervals() const { return interior_knots + 1; }
  int basis_count() const { return degree + 1 + interior_knots; }
};

// Gabor kernel value grid built without the tape (inspection / oracle use).
Tensor gabor_kernel(double f, double theta, double sigma, int k, bool alt_form = false);

// Builds the same kernel on the tape from scalar Vars so gradients reach the
// frequency and orientation parameters.
Var gabor_kernel_on_tape(Tape& t, Var f, Var theta, double sigma, int k, bool alt_form = false);

// Non-uniform KAN feed-forward: per-channel rational splines with NCPG knot
// placement, a channel mixing map, and the gated spectral-conv branch.
class NukesFfn {
 public:
  NukesFfn(ParamGroup& pg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var forward(Tape& t, Binder& bind, Var x) const;

 private:
  BlockConfig cfg_;
  std::vector<Param*> knot_raw_;  // per channel, empty in traditional mode
  std::vector<Param*> ctrl_;
  std::vector<Param*> wts_raw_;   // per channel, empty in traditional mode
  Param* alpha_ = nullptr;
  Param* mix_w_ = nullptr;
  Param* mix_b_ = nullptr;
  Param* spec_w_ = nullptr;
  Param* spec_b_ = nullptr;
};

// Spectral MSA fused with the dynamic Gabor frequency branch by addition.
class Gmsa {
 public:
  Gmsa(ParamGroup& pg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var forward(Tape& t, Binder& bind, Var x) const;
  Var msa_branch(Tape& t, Binder& bind, Var x) const;
  Var gabor_branch(Tape& t, Binder& bind, Var v, Var context) const;

 private:
  BlockConfig cfg_;
  Param* wq_ = nullptr;
  Param* wk_ = nullptr;
  Param* wv_ = nullptr;
  Param* freq_w_ = nullptr;
  Param* freq_b_ = nullptr;
  Param* theta_ = nullptr;
  Param* out_w_ = nullptr;
  Param* out_b_ = nullptr;
};

// Pre-norm residual pair: x + gmsa(norm(x)), then y + ffn(norm(y)).
class NukMsaBlock {
 public:
  NukMsaBlock(ParamGroup& pg, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
  Var forward(Tape& t, Binder& bind, Var x) const;

 private:
  Param* ln1_g_ = nullptr;
  Param* ln1_b_ = nullptr;
  Param* ln2_g_ = nullptr;
  Param* ln2_b_ = nullptr;
  Gmsa gmsa_;
  NukesFfn ffn_;
};

// helpers shared by the model code
Tensor init_normal(std::vector<int> shape, Rng& rng, double stddev);
Tensor init_const(std::vector<int> shape, double v);

}  // namespace nukes
