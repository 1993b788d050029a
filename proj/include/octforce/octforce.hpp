#pragma once

#include "octforce/common.hpp"
#include "octforce/dataset.hpp"
#include "octforce/nets.hpp"
#include "octforce/ops.hpp"
#include "octforce/sim.hpp"
#include "octforce/streams.hpp"
#include "octforce/tensor.hpp"
#include "octforce/train_eval.hpp"
