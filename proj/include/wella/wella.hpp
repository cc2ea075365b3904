#pragma once

// Umbrella header: the whole library in one include.

#include "wella/backend_remote.hpp"
#include "wella/cli.hpp"
#include "wella/config.hpp"
#include "wella/errors.hpp"
#include "wella/evaluation.hpp"
#include "wella/goms.hpp"
#include "wella/metrics.hpp"
#include "wella/orchestrator.hpp"
#include "wella/rng.hpp"
#include "wella/scenario.hpp"
#include "wella/sft.hpp"
#include "wella/survey.hpp"
#include "wella/trajectory.hpp"
