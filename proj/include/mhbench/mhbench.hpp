#pragma once
// Umbrella header for the core library (no HTTP).

#include "mhbench/api.hpp"
#include "mhbench/benchmark_format.hpp"
#include "mhbench/common.hpp"
#include "mhbench/conversational_dynamics.hpp"
#include "mhbench/evaluation_engine.hpp"
#include "mhbench/model_gateway.hpp"
#include "mhbench/platform_store.hpp"
#include "mhbench/reasoning_analysis.hpp"
#include "mhbench/technical_profile.hpp"
