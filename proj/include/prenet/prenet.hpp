#pragma once

#include "prenet/model.hpp"
#include "prenet/penalty.hpp"
#include "prenet/solver.hpp"
#include "prenet/selection.hpp"
#include "prenet/path.hpp"
#include "prenet/clustering.hpp"
#include "prenet/simulation.hpp"
#include "prenet/table.hpp"
