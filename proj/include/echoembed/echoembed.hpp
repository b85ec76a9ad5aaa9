#pragma once

#include "echoembed/analysis.hpp"
#include "echoembed/backend.hpp"
#include "echoembed/error.hpp"
#include "echoembed/pooling.hpp"
#include "echoembed/provider.hpp"
#include "echoembed/random.hpp"
#include "echoembed/strategy.hpp"
#include "echoembed/synthetic_bench.hpp"
#include "echoembed/templating.hpp"
#include "echoembed/toy_model.hpp"
#include "echoembed/trainer.hpp"
