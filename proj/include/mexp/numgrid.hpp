#pragma once

#include "mexp/numgrid/checkpoint.hpp"
#include "mexp/numgrid/grid.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"
#include "mexp/numgrid/rng.hpp"
#include "mexp/numgrid/tape.hpp"
