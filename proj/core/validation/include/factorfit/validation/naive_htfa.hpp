#pragma once

#include "factorfit/htfa.hpp"

#include <vector>

namespace factorfit::validation {

/// Template update written with explicit inverses:
///   mu_new    = (Sig^-1 + N Sig_mu^-1)^-1 (Sig^-1 mu^ + N Sig_mu^-1 mu_bar)
///   Sig_new   = (Sig^-1 + N Sig_mu^-1)^-1
///   lam_new   = (s^-2 + N s_lam^-2)^-1 (s^-2 lam^ + N s_lam^-2 lam_bar)
///   s2_new    = (s^-2 + N s_lam^-2)^-1
htfa::GlobalTemplate naive_global_step(const std::vector<Matrix>& centers,
                                       const std::vector<Vector>& widths,
                                       const htfa::GlobalTemplate& templ);

}  // namespace factorfit::validation
