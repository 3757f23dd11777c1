#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>

#include "egmr/errors.hpp"

namespace egmr {

/// Architecture configuration shared by every sub-network.
struct ModelConfig {
  int bins = 5;                     // voxel grid temporal bins per segment
  int event_base = 16;              // Event Flow Net width at full resolution, doubled per stage
  std::array<int, 3> if_width{64, 48, 32};  // IFBlock widths for scales 0, 1, 2
  std::array<int, 3> if_factor{4, 2, 1};    // IFBlock internal downsampling factors
  int if_res_convs = 2;             // convs inside each IFBlock residual stack
  int patch = 16;                   // CLA patch size
  int embed_dim = 64;               // CLA token width
  int mask_size = 3;                // CLA neighbourhood side, odd
  int coa_width = 16;
  int c2sa_width = 16;
  int refine_base = 16;
  bool use_ega = true;              // false: concat + conv flow fusion (ablation baseline)
  bool use_c2sa = true;             // false: I_tau = I^F + residual, M^e not used for synthesis
  std::uint64_t init_seed = 1;

  void validate() const {
    if (bins < 2) throw ParameterError("bins must be >= 2");
    if (mask_size < 1 || mask_size % 2 == 0) throw ParameterError("mask_size must be odd and >= 1");
    for (int f : if_factor) {
      if (f < 1) throw ParameterError("IFBlock factors must be positive");
    }
    if (patch < 1 || embed_dim < 1 || event_base < 1 || refine_base < 1 || coa_width < 4 || c2sa_width < 1) {
      throw ParameterError("non-positive network width");
    }
  }

  /// Canonical description of everything that determines parameter shapes and
  /// the forward graph; stored in checkpoints.
  std::string fingerprint() const {
    std::ostringstream os;
    os << "egmr/1 bins=" << bins << " ev=" << event_base << " if=" << if_width[0] << "/" << if_width[1] << "/"
       << if_width[2] << " k=" << if_factor[0] << "/" << if_factor[1] << "/" << if_factor[2]
       << " res=" << if_res_convs << " P=" << patch << " d=" << embed_dim << " m=" << mask_size
       << " coa=" << coa_width << " c2sa=" << c2sa_width << " ref=" << refine_base << " ega=" << use_ega
       << " c2sa_on=" << use_c2sa;
    return os.str();
  }
};

}  // namespace egmr
