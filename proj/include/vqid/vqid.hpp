#pragma once

// Umbrella header for the vector-quantized identification library.

#include "vqid/config.hpp"
#include "vqid/decoders.hpp"
#include "vqid/ensemble.hpp"
#include "vqid/errors.hpp"
#include "vqid/exponents.hpp"
#include "vqid/harness.hpp"
#include "vqid/iproject.hpp"
#include "vqid/prob.hpp"
#include "vqid/rng.hpp"
#include "vqid/simulation.hpp"
#include "vqid/types.hpp"
