#pragma once

#include "augmented.hpp"
#include "config.hpp"
#include "ensemble.hpp"
#include "error.hpp"
#include "evolution.hpp"
#include "experiment.hpp"
#include "fft.hpp"
#include "group_velocity.hpp"
#include "io.hpp"
#include "lattice.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "spectral.hpp"
