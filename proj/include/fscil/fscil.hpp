#pragma once

#include "fscil/analysis.hpp"
#include "fscil/batching.hpp"
#include "fscil/config.hpp"
#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/gradcheck.hpp"
#include "fscil/graph.hpp"
#include "fscil/losses.hpp"
#include "fscil/metrics.hpp"
#include "fscil/model.hpp"
#include "fscil/optim.hpp"
#include "fscil/params.hpp"
#include "fscil/protocol.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"
