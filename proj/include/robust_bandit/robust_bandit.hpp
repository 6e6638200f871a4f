#pragma once

#include "augment.hpp"
#include "bandit.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "features.hpp"
#include "random.hpp"
#include "scenarios.hpp"
#include "simulator.hpp"
