#pragma once

// Umbrella header for the levctl two-mode coherent-control toolkit.

#include "levctl/analysis.hpp"
#include "levctl/config.hpp"
#include "levctl/constants.hpp"
#include "levctl/envelope.hpp"
#include "levctl/errors.hpp"
#include "levctl/feedback.hpp"
#include "levctl/fit.hpp"
#include "levctl/fullsim.hpp"
#include "levctl/io.hpp"
#include "levctl/model.hpp"
#include "levctl/protocols.hpp"
#include "levctl/rng.hpp"
#include "levctl/schedule.hpp"
