#pragma once

// Everything: measures, coefficients, simulation, claims, hedging, probes, scenarios.
#include "bondcomp/claims.hpp"
#include "bondcomp/errors.hpp"
#include "bondcomp/experiments.hpp"
#include "bondcomp/hedge.hpp"
#include "bondcomp/hjm.hpp"
#include "bondcomp/levy.hpp"
#include "bondcomp/parallel.hpp"
#include "bondcomp/paths.hpp"
#include "bondcomp/probe.hpp"
#include "bondcomp/rng.hpp"
#include "bondcomp/scenario.hpp"
