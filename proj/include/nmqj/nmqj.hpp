#pragma once

#include "nmqj/liouville.hpp"
#include "nmqj/rng.hpp"
#include "nmqj/jump_process.hpp"
#include "nmqj/bipartite.hpp"
#include "nmqj/propagator.hpp"
#include "nmqj/trajectories.hpp"
#include "nmqj/volterra.hpp"
#include "nmqj/two_level.hpp"
#include "nmqj/counting.hpp"
#include "nmqj/figures.hpp"
#include "nmqj/io.hpp"
