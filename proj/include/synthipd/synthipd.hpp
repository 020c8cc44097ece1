#pragma once

// Umbrella header for the whole toolkit.

#include "synthipd/common.hpp"
#include "synthipd/covgen.hpp"
#include "synthipd/digitize.hpp"
#include "synthipd/io.hpp"
#include "synthipd/metrics.hpp"
#include "synthipd/pipeline.hpp"
#include "synthipd/render.hpp"
#include "synthipd/rng.hpp"
#include "synthipd/simulate.hpp"
#include "synthipd/survival.hpp"
#include "synthipd/svg.hpp"
#include "synthipd/types.hpp"
