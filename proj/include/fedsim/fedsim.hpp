#pragma once

#include "fedsim/cli.hpp"
#include "fedsim/common.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/io.hpp"
#include "fedsim/knowledge.hpp"
#include "fedsim/losses.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"
