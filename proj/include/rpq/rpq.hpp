#pragma once

// Umbrella header: routing-guided learned product quantization for
// graph-based approximate nearest neighbor search.

#include "rpq/bench.hpp"
#include "rpq/codebook.hpp"
#include "rpq/common.hpp"
#include "rpq/dataset.hpp"
#include "rpq/distance.hpp"
#include "rpq/features.hpp"
#include "rpq/graph.hpp"
#include "rpq/model.hpp"
#include "rpq/quantizer.hpp"
#include "rpq/rng.hpp"
#include "rpq/rotation.hpp"
#include "rpq/scenarios.hpp"
#include "rpq/trainer.hpp"
