#pragma once

#include "overem/errors.hpp"
#include "overem/simplex.hpp"
#include "overem/mixture.hpp"
#include "overem/engine.hpp"
#include "overem/population_em.hpp"
#include "overem/sample_em.hpp"
#include "overem/lloyd.hpp"
#include "overem/experiments.hpp"
