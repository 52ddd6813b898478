#pragma once

#include "icupass/baselines.hpp"
#include "icupass/cohort.hpp"
#include "icupass/common.hpp"
#include "icupass/eval.hpp"
#include "icupass/featurize.hpp"
#include "icupass/manifest.hpp"
#include "icupass/pass.hpp"
#include "icupass/pipeline.hpp"
#include "icupass/rng.hpp"
#include "icupass/rnn.hpp"
#include "icupass/synth.hpp"
