#pragma once

#include "config.hpp"
#include "gradcheck.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "nifti_io.hpp"
#include "optimizer.hpp"
#include "parallel.hpp"
#include "resample.hpp"
#include "synth.hpp"
#include "types.hpp"
#include "util.hpp"
#include "version.hpp"
