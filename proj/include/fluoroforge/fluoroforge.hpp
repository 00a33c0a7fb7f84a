#pragma once

// Umbrella header: stochastic fluorescence time-series simulation, Bayesian
// super-resolution reconstruction, and image quality metrics.

#include "conjugate_gradient.hpp"
#include "errors.hpp"
#include "hmm.hpp"
#include "image.hpp"
#include "inference.hpp"
#include "metrics.hpp"
#include "photophysics.hpp"
#include "pipeline.hpp"
#include "png_io.hpp"
#include "rng.hpp"
#include "simulator.hpp"
#include "tiling.hpp"
