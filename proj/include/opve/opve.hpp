#pragma once

#include "opve/error.hpp"
#include "opve/random.hpp"
#include "opve/logistic.hpp"
#include "opve/kernel_ridge.hpp"
#include "opve/core.hpp"
#include "opve/nuisance.hpp"
#include "opve/estimators.hpp"
#include "opve/batched.hpp"
#include "opve/bandit.hpp"
#include "opve/dataio.hpp"
#include "opve/harness.hpp"
