// Umbrella header.
#pragma once

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "cost.hpp"
#include "encoder.hpp"
#include "harness.hpp"
#include "labels.hpp"
#include "metrics.hpp"
#include "objective.hpp"
#include "random.hpp"
#include "user_state.hpp"
