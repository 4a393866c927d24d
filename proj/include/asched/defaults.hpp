#pragma once

#include "asched/model.hpp"

namespace asched {

// Posterior means of the joint model fitted to the PRIAS cohort: longitudinal
// sub-model (beta, sigma = 0.324, D) and relative-risk sub-model (gamma,
// alpha). The baseline hazard of that fit is not published; the shipped
// default uses the Weibull(k = 3, lambda = 5) baseline of the middle
// simulation subgroup.
Theta prias_posterior_means();

// Weibull baselines (k, lambda) of the three simulated subgroups.
WeibullBaseline prias_subgroup_baseline(int subgroup);

}  // namespace asched
