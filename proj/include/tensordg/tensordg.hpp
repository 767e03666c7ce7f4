#pragma once

#include "errors.hpp"
#include "tensor.hpp"
#include "index_sets.hpp"
#include "regress.hpp"
#include "spectral.hpp"
#include "completion.hpp"
#include "transfer.hpp"
#include "highdim.hpp"
#include "baselines.hpp"
#include "simgen.hpp"
#include "metrics.hpp"
#include "experiment.hpp"
#include "io.hpp"
