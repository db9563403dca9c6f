#pragma once

#include "ssinfer/causal.hpp"
#include "ssinfer/data.hpp"
#include "ssinfer/io.hpp"
#include "ssinfer/mean_variance.hpp"
#include "ssinfer/nuisance.hpp"
#include "ssinfer/rng.hpp"
#include "ssinfer/sim.hpp"
#include "ssinfer/stats.hpp"
