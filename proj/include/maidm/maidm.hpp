#pragma once

#include "maidm/error.hpp"
#include "maidm/rng.hpp"
#include "maidm/idm.hpp"
#include "maidm/gp.hpp"
#include "maidm/toeplitz.hpp"
#include "maidm/lkj.hpp"
#include "maidm/csv.hpp"
#include "maidm/episode.hpp"
#include "maidm/highd.hpp"
#include "maidm/synth.hpp"
#include "maidm/model.hpp"
#include "maidm/mcmc.hpp"
#include "maidm/diagnostics.hpp"
#include "maidm/simulate.hpp"
#include "maidm/ring.hpp"
#include "maidm/evaluation.hpp"
#include "maidm/io.hpp"
#include "maidm/config.hpp"
