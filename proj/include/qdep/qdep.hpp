#pragma once

#include "asymptotics.hpp"
#include "errors.hpp"
#include "estimator.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "oracle.hpp"
#include "sample.hpp"
#include "simlab.hpp"
#include "stats.hpp"
