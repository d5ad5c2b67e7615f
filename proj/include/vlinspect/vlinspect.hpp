#pragma once

#include "ablate.hpp"
#include "analytics.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "features.hpp"
#include "forward.hpp"
#include "hash.hpp"
#include "heads.hpp"
#include "math.hpp"
#include "model.hpp"
#include "service.hpp"
#include "stats.hpp"
#include "synth.hpp"
#include "tokenizer.hpp"
