#pragma once

#include "lcnn/augment.hpp"
#include "lcnn/data.hpp"
#include "lcnn/error.hpp"
#include "lcnn/image.hpp"
#include "lcnn/layers.hpp"
#include "lcnn/loss.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/model.hpp"
#include "lcnn/optim.hpp"
#include "lcnn/rng.hpp"
#include "lcnn/runtime.hpp"
#include "lcnn/synth.hpp"
#include "lcnn/tensor.hpp"
#include "lcnn/train.hpp"
